"""Regenerate src/rackctl/data/capacity.csv from the bundled TP profile.

The heaviest per-GPU load in the TP profile (TP2 at 195k tokens, i.e. 97.5k
tokens per GPU per 5-minute window) is taken as one GPU's window capacity.
A TPm pool gets m times that; the 30-minute column is six windows.
"""

from pathlib import Path

from rackctl.gpu_models import _read_text, capacity_csv, derive_capacity, parse_tp_csv

out = Path(__file__).resolve().parents[1] / "src" / "rackctl" / "data" / "capacity.csv"
text = capacity_csv(derive_capacity(parse_tp_csv(_read_text("tp_profile.csv"))))
out.write_text(text)
print(text, end="")
