"""Dense sweep of worst-case depth error per quantization scheme.

Writes ``quant_sweep.csv`` (and the headline table) via the CLI and prints
where each scheme crosses a few AbsRel levels.

    python scripts/quant_sweep.py --out runs/quant --points 400
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from geoflow.cli import main as cli


def crossings(path: Path, levels=(0.01, 0.05, 0.25)) -> None:
    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    for scheme in dict.fromkeys(r["scheme"] for r in rows):
        d = np.array([float(r["depth_m"]) for r in rows if r["scheme"] == scheme])
        rel = np.array([float(r["absrel"]) for r in rows if r["scheme"] == scheme])
        parts = []
        for lv in levels:
            ok = d[rel <= lv]
            parts.append(f"AbsRel<={lv:g}: " + (f"{ok.min():.3g}-{ok.max():.3g} m" if ok.size else "never"))
        print(f"{scheme:>12}  " + "  ".join(parts))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/quant_sweep")
    ap.add_argument("--points", type=int, default=400)
    ap.add_argument("--delta-v", default="1/256")
    a = ap.parse_args()
    code = cli(["quant-table", "--out", a.out, "--sweep-points", str(a.points), "--delta-v", a.delta_v])
    if code == 0:
        crossings(Path(a.out) / "quant_sweep.csv")
    raise SystemExit(code)
