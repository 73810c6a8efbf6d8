"""Velocity-field figure: analytic marginal fields, plus a trained 2-D toy model if asked.

    python scripts/field_figure.py --out runs/field
    python scripts/field_figure.py --out runs/field --train-epochs 30
"""

import argparse
from pathlib import Path

from geoflow.cli import main as cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/field")
    ap.add_argument("--train-epochs", type=int, default=0, help="also train and plot a 2-D direct-objective model")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    out = Path(a.out)
    code = cli(["field-plot", "--out", str(out / "analytic"), "--seed", str(a.seed)])
    if code == 0 and a.train_epochs > 0:
        code = cli(["train", "--task", "toy", "--objective", "direct", "--target-dim", "2",
                    "--epochs", str(a.train_epochs), "--seed", str(a.seed), "--out", str(out / "model")])
        if code == 0:
            code = cli(["field-plot", "--mode", "checkpoint", "--run", str(out / "model"),
                        "--out", str(out / "trained"), "--seed", str(a.seed)])
    raise SystemExit(code)
