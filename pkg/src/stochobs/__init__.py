"""Observability constants, backward stochastic solvers and null controls for
stochastic parabolic equations with multiplicative noise, in modal form."""

__version__ = "0.1.0"
