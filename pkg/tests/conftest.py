import sys
from pathlib import Path

# let test modules import shared helpers without packaging tests/
sys.path.insert(0, str(Path(__file__).resolve().parent))
