import sys
from pathlib import Path

# Allow `from helpers import ...` inside test modules.
sys.path.insert(0, str(Path(__file__).parent))
