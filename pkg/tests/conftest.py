import sys
from pathlib import Path

# test modules import shared fixtures from each other (make_log, oracles)
sys.path.insert(0, str(Path(__file__).parent))
