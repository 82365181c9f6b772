import sys
from pathlib import Path

# lets the tests import the shared oracles module
sys.path.insert(0, str(Path(__file__).parent))
