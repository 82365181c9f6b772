"""Named experiment pipelines writing CSV/JSON outputs into hash-keyed run directories."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import TerminalDatum, check_decay, check_interpolation, solve_backward_closed_form, solve_backward_regression
from .config import ExperimentConfig, RunRecord
from .core import BrownianEnsemble, EnsembleSpec, Family, TimeGrid
from .hum import build_dual, dual_control, lift_control, solve_dual, verify_null
from .spectra import SpectralBasis, closed_form_basis, degenerate_basis, export_basis, orthonormality_residual
from .specineq import fit_condition_H, refine_degenerate_set
from .telescope import (
    assemble_constant,
    build_sequence,
    empirical_observability_ratio,
    find_anchor,
    log_observability_constant,
    write_report,
)

__all__ = ["make_basis", "observation_set", "run_pipeline", "emit_report", "RECORD_NAME"]

RECORD_NAME = "record.json"


def make_basis(cfg: ExperimentConfig, m: int | None = None) -> SpectralBasis:
    m = cfg.m if m is None else m
    if cfg.operator.family is Family.DEGENERATE:
        return degenerate_basis(cfg.operator, m, mesh_n=cfg.mesh_n)
    return closed_form_basis(cfg.operator, m, n_nodes=cfg.n_quad)


def observation_set(cfg: ExperimentConfig):
    """``G`` or, for degenerate operators, ``G0 = G ∩ (eps, 1)``; returns ``(G, eps)``."""
    if cfg.use_G0:
        eps, G0 = refine_degenerate_set(cfg.G)
        return G0, eps
    return cfg.G, None


def _ensemble(cfg: ExperimentConfig, threads: int) -> BrownianEnsemble:
    return BrownianEnsemble.sample(EnsembleSpec(cfg.n_paths, cfg.seed), TimeGrid(cfg.T, cfg.n_steps), threads)


def _lambda_grid(cfg: ExperimentConfig, basis: SpectralBasis) -> np.ndarray:
    if cfg.lambda_grid is not None:
        return np.asarray(cfg.lambda_grid, dtype=float)
    return np.linspace(basis.lambdas[0], basis.lambdas[cfg.m - 1], 10)


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])
    return path


def _mixed_datum(cfg: ExperimentConfig) -> TerminalDatum:
    k = min(2, cfg.m)
    return TerminalDatum.linear_in_WT(np.ones(k), 0.5 * np.ones(k))


# pipelines ---------------------------------------------------------------


def _spectra(cfg, out, threads):
    basis = make_basis(cfg)
    paths = export_basis(basis, out)
    summary = {
        "m": basis.m,
        "lambda_1": float(basis.lambdas[0]),
        "lambda_m": float(basis.lambdas[-1]),
        "orthonormality_residual": orthonormality_residual(basis),
    }
    return paths, summary


def _fit(cfg, basis):
    G, eps = observation_set(cfg)
    fit = fit_condition_H(basis, G, _lambda_grid(cfg, basis), cfg.exponent)
    return fit, G, eps


def _specineq(cfg, out, threads):
    basis = make_basis(cfg)
    fit, G, eps = _fit(cfg, basis)
    paths = fit.write(out)
    summary = dict(fit.summary(), G=G.to_list(), eps=eps)
    return paths, summary


def _bsde_check(cfg, out, threads):
    basis = make_basis(cfg, max(cfg.m, 3))
    br = _ensemble(cfg, threads)
    k = min(3, basis.m)
    eta = TerminalDatum.linear_in_WT(np.ones(k), np.ones(k))
    exact = solve_backward_closed_form(basis, eta, cfg.noise, br, cfg.sign)
    reg = solve_backward_regression(basis, eta, cfg.noise, br, sign=cfg.sign)
    err = reg.z - exact.z
    dt = br.grid.dt
    num = math.sqrt(float(np.sum(np.mean(np.sum(err**2, -1), 0)[:-1]) * dt))
    den = math.sqrt(float(np.sum(np.mean(np.sum(exact.z**2, -1), 0)[:-1]) * dt))
    # decay check on the modes above lambda_1
    high = TerminalDatum.linear_in_WT(np.r_[0.0, np.ones(k - 1)], np.r_[0.0, np.ones(k - 1)])
    decay = check_decay(basis, high, cfg.noise, br, float(basis.lambdas[0]), cfg.sign)
    G, _ = observation_set(cfg)
    fit, _, _ = _fit(cfg.replace(m=max(cfg.m, 3)), basis)
    interp = check_interpolation(basis, G, _mixed_datum(cfg), cfg.noise, br, cfg.exponent, fit.N_hat, cfg.sign)
    paths = [
        decay.write_csv(out / "decay.csv"),
        _write_csv(out / "interpolation.csv", ["t", "ratio", "K_hat"], zip(interp.t, interp.ratio, interp.K_hat)),
        _write_csv(
            out / "regression.csv",
            ["t", "closed_form_mean_sq", "regression_mean_sq"],
            zip(br.grid.nodes, exact.sq_norm().mean(0), reg.sq_norm().mean(0)),
        ),
    ]
    summary = {
        "regression_relative_L2_error": num / den,
        "decay_violations": int(len(decay.violations)),
        "decay_min_margin": float(decay.margin.min()),
        "K_sup": interp.K_sup,
        "N_hat": fit.N_hat,
    }
    paths.append(_write_json(out / "bsde_check.json", summary))
    return paths, summary


def _constants(cfg, threads):
    """Anchor, telescope sequence and assembled constant from empirical ``N``, ``K``."""
    basis = make_basis(cfg)
    fit, G, eps = _fit(cfg, basis)
    br = _ensemble(cfg, threads)
    if cfg.C is not None:
        C, K_sup = cfg.C, None
    else:
        K_sup = check_interpolation(
            basis, G, _mixed_datum(cfg), cfg.noise, br, cfg.exponent, fit.N_hat, cfg.sign
        ).K_sup
        C = max(fit.N_hat, K_sup)
    ell, ell_1 = find_anchor(cfg.E)
    seq = build_sequence(cfg.E, ell, ell_1, C, cfg.exponent, cfg.n_max, cfg.T)
    tau = cfg.noise.tau
    try:
        log_c = log_observability_constant(seq, C, cfg.exponent, tau)
    except OverflowError:
        log_c = math.inf
    try:
        C_obs = assemble_constant(seq, C, cfg.exponent, tau, cfg.T)
    except OverflowError:
        C_obs = math.inf
    info = {
        "N_hat": fit.N_hat,
        "K_sup": K_sup,
        "C_used": C,
        "gamma": cfg.exponent,
        "ell": ell,
        "ell_1": ell_1,
        "q": seq.q,
        "n_used": seq.n_used,
        "C_obs": C_obs,
        "log_C_obs": log_c,
        "G_observed": G.to_list(),
        "eps": eps,
        "label": "empirical upper constant",
    }
    return basis, G, br, seq, info


def _telescope(cfg, out, threads):
    _, _, _, seq, info = _constants(cfg, threads)
    p = write_report(seq, info["C_obs"], out / "telescope.json")
    doc = json.loads(p.read_text())
    doc.update({k: v for k, v in info.items() if k not in doc})
    _write_json(p, doc)
    rows = zip(range(1, seq.n_used + 1), seq.ell_n[:-1], seq.tau_n, seq.ell_n[1:])
    paths = [p, _write_csv(out / "sequence.csv", ["n", "ell_n", "tau_n", "ell_n_plus_1"], rows)]
    return paths, info


def _observability(cfg, out, threads):
    basis, G, br, seq, info = _constants(cfg, threads)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(cfg.n_eta):
        a = rng.standard_normal(cfg.m)
        b = rng.standard_normal(cfg.m) if not cfg.noise.is_zero or i % 2 else np.zeros(cfg.m)
        r = empirical_observability_ratio(basis, G, cfg.E, TerminalDatum.linear_in_WT(a, b), cfg.noise, br, cfg.sign)
        rows.append((i, r.z0_norm, r.observation, r.ratio, r.std_err))
    ratios = np.array([r[3] for r in rows])
    ses = np.array([r[4] for r in rows])
    C_obs = info["C_obs"]
    bound_ok = bool(np.all(ratios <= C_obs + 3 * ses))
    table = [row + (C_obs,) for row in rows]
    paths = [
        _write_csv(out / "observability.csv", ["eta", "z0_norm", "observation_L1L2", "ratio", "std_err", "C_obs"], table),
    ]
    summary = dict(info, max_ratio=float(ratios.max()), bound_ok=bound_ok)
    full_G = G.measure() >= (basis.op.interval[1] - basis.op.interval[0]) * (1 - 1e-12)
    if full_G:
        summary["full_observation_bound"] = math.exp(cfg.noise.tau * cfg.T / 2) / cfg.E.measure()
        summary["full_observation_ok"] = bool(np.all(ratios <= summary["full_observation_bound"] + 3 * ses))
    paths.append(_write_json(out / "observability.json", summary))
    return paths, summary


def _control(cfg, out, threads):
    basis = make_basis(cfg, cfg.simulation_modes)
    G, eps = observation_set(cfg)
    br = _ensemble(cfg, threads)
    rows, reports = [], {}
    for m in sorted(set(cfg.m_values) | {cfg.m}):
        y0 = np.eye(m)[0]
        system = build_dual(basis, G, cfg.E, cfg.T, y0, m, cfg.epsilon)
        eta_hat = solve_dual(system)
        v = dual_control(system, eta_hat, br.grid)
        u = lift_control(v, cfg.noise, br)
        rep = verify_null(basis, y0, u, cfg.noise, br, m, cfg.epsilon, v)
        reports[m] = rep
        rows.append(
            (
                m,
                rep.terminal_ratio_controlled,
                rep.terminal_ratio_spillover,
                rep.terminal_ratio_total,
                rep.deterministic_controlled_ratio,
                rep.cost_ratio,
                rep.linf_control_norm,
                rep.l2_control_norm,
            )
        )
        if m == cfg.m:
            v.write_csv(out / "control_deterministic.csv")
    header = [
        "m",
        "terminal_ratio_controlled",
        "terminal_ratio_spillover",
        "terminal_ratio_total",
        "deterministic_controlled_ratio",
        "cost_ratio",
        "linf_control_norm",
        "l2_control_norm",
    ]
    paths = [
        _write_csv(out / "control_table.csv", header, rows),
        reports[cfg.m].write_json(out / "control.json"),
        out / "control_deterministic.csv",
    ]
    summary = dict(reports[cfg.m].to_dict(), G_observed=G.to_list(), eps=eps)
    summary["cost_table"] = {str(m): reports[m].cost_ratio for m in sorted(reports)}
    return paths, summary


_PIPELINES = {
    "spectra": _spectra,
    "specineq": _specineq,
    "bsde-check": _bsde_check,
    "telescope": _telescope,
    "observability": _observability,
    "control": _control,
}


def run_pipeline(cfg: ExperimentConfig, out: Path | str = "runs", threads: int = 1) -> RunRecord:
    """Run ``cfg.pipeline`` into ``out/<pipeline>-<hash12>`` and write ``record.json``.

    Numeric outputs depend only on the configuration, never on ``threads``.
    """
    h = cfg.hash()
    run_dir = Path(out) / f"{cfg.pipeline}-{h[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    try:
        paths, summary = _PIPELINES[cfg.pipeline](cfg, run_dir, threads)
    except Exception as exc:
        raise RuntimeError(f"pipeline {cfg.pipeline!r} failed: {exc}") from exc
    record = RunRecord(
        config_hash=h,
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        version=__version__,
        run_dir=str(run_dir),
        pipeline=cfg.pipeline,
        outputs=sorted({Path(p).name for p in paths} | {"config.json"}),
        summary=_jsonable(summary),
    )
    _write_json(run_dir / RECORD_NAME, record.to_dict())
    return record


def _jsonable(x):
    return json.loads(json.dumps(x))


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(rows_i) + " |" for rows_i in rows]
    return "\n".join(lines)


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def emit_report(record: RunRecord | Path | str) -> dict:
    """Write ``report.md`` and ``report.json`` next to the run outputs."""
    if isinstance(record, RunRecord):
        run_dir = Path(record.run_dir)
    else:
        run_dir = Path(record)
        rec_path = run_dir / RECORD_NAME
        if not run_dir.is_dir() or not any(run_dir.iterdir()):
            raise FileNotFoundError(f"empty or missing run directory: {run_dir}")
        if not rec_path.exists():
            raise FileNotFoundError(f"no {RECORD_NAME} in {run_dir}")
        record = RunRecord.from_dict(json.loads(rec_path.read_text()))
    missing = [p for p in record.outputs if not (run_dir / p).exists()]
    if not record.outputs or missing:
        raise FileNotFoundError(f"missing outputs in {run_dir}: {missing or 'none recorded'}")

    lines = [f"# {record.pipeline} run {record.config_hash[:12]}", "", f"version {record.version}", ""]
    scalars = [(k, _fmt(v)) for k, v in sorted(record.summary.items()) if not isinstance(v, (dict, list))]
    lines += [_md_table(["metric", "value"], scalars), ""]
    if record.pipeline == "observability":
        with (run_dir / "observability.csv").open() as fh:
            rows = list(csv.reader(fh))
        lines += ["## observability ratios", "", _md_table(
            ["eta", "||z(0)||", "observation L1L2", "ratio", "C_obs"],
            [[r[0], _fmt(float(r[1])), _fmt(float(r[2])), _fmt(float(r[3])), _fmt(float(r[5]))] for r in rows[1:]],
        ), ""]
    if record.pipeline == "control":
        with (run_dir / "control_table.csv").open() as fh:
            rows = list(csv.reader(fh))
        lines += ["## control cost per m", "", _md_table(
            ["m", "controlled", "spillover", "cost ratio", "L-inf norm"],
            [[r[0], _fmt(float(r[1])), _fmt(float(r[2])), _fmt(float(r[5])), _fmt(float(r[6]))] for r in rows[1:]],
        ), ""]
    lines += ["## files", ""] + [f"- {p}" for p in record.outputs]
    text = "\n".join(lines) + "\n"
    (run_dir / "report.md").write_text(text, encoding="utf-8")
    doc = {"record": record.to_dict(), "markdown": "report.md"}
    _write_json(run_dir / "report.json", doc)
    return doc
