import sys
from pathlib import Path

# allow plain-module imports of test helpers (_synth and friends)
sys.path.insert(0, str(Path(__file__).parent))
