import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

# Repository root of the primary system; the shim consumes its committed
# golden transcripts and scenario fixtures as plain files.
PRIMARY_ROOT = Path(__file__).resolve().parents[2]
