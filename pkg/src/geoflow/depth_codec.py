"""Depth-label quantization: uniform, inverse and logarithmic schemes.

Each scheme transforms depth ``D`` into ``X`` (``D``, ``1/D`` or ``ln D``),
min-max maps ``X`` onto [-1, 1] and rounds to BF16. A quantization step
``delta_v`` in label space is a step of ``(X_max - X_min) / 2 * delta_v`` in
``X``; pushing that through ``dD/dX`` gives the worst-case depth error.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bf16 import StepModel, bf16_round
from .errors import DegenerateInputError, DomainError

LOG_EPS = 1e-6
PERCENTILES = (2.0, 98.0)


class SchemeKind(str, enum.Enum):
    UNIFORM = "uniform"
    INVERSE = "inverse"
    LOGARITHMIC = "logarithmic"

    @classmethod
    def parse(cls, name: str) -> SchemeKind:
        aliases = {"log": "logarithmic", "direct": "uniform", "disparity": "inverse"}
        return cls(aliases.get(name.lower(), name.lower()))


@dataclass(frozen=True)
class QuantScheme:
    kind: SchemeKind
    d_min: float
    d_max: float

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind.parse(self.kind) if isinstance(self.kind, str) else self.kind)
        if not self.d_min < self.d_max:
            raise ValueError(f"need d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if self.kind is SchemeKind.UNIFORM:
            if self.d_min < 0:
                raise ValueError("uniform scheme needs d_min >= 0")
        elif self.d_min <= 0:
            raise ValueError(f"{self.kind.value} scheme needs d_min > 0")

    def transform(self, depth):
        d = np.asarray(depth, dtype=np.float64)
        if self.kind is SchemeKind.UNIFORM:
            return d
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is SchemeKind.INVERSE:
                return 1.0 / d
            return np.log(d)

    def inverse_transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind is SchemeKind.UNIFORM:
            return x
        if self.kind is SchemeKind.INVERSE:
            return 1.0 / x
        return np.exp(x)

    @property
    def x_range(self) -> tuple[float, float]:
        a, b = float(self.transform(self.d_min)), float(self.transform(self.d_max))
        return min(a, b), max(a, b)

    def x_step(self, step: StepModel) -> float:
        lo, hi = self.x_range
        return (hi - lo) / 2.0 * step.delta_v


# Virtual KITTI range used for the error table
def table_schemes() -> list[QuantScheme]:
    return [
        QuantScheme(SchemeKind.UNIFORM, 0.0, 80.0),
        QuantScheme(SchemeKind.INVERSE, 0.1, 80.0),
        QuantScheme(SchemeKind.LOGARITHMIC, 0.1, 80.0),
    ]


@dataclass
class NormalizedLabel:
    values: np.ndarray
    valid_mask: np.ndarray
    # (low, high) anchors in transformed space, set by percentile normalization
    anchors: tuple[float, float] | None = field(default=None)


def encode(scheme: QuantScheme, depth, valid_mask=None, rounding: bool = True) -> NormalizedLabel:
    """Map depth to [-1, 1] labels under ``scheme``; invalid pixels are masked, not raised."""
    d = np.asarray(depth, dtype=np.float64)
    mask = np.isfinite(d)
    if valid_mask is not None:
        mask &= np.asarray(valid_mask, dtype=bool)
    if scheme.kind is not SchemeKind.UNIFORM:
        mask &= d > 0
    lo, hi = scheme.x_range
    x = scheme.transform(np.where(mask, d, scheme.d_max))
    v = np.clip(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0)
    if rounding:
        v = bf16_round(v)
    return NormalizedLabel(np.where(mask, v, 0.0), mask)


def decode(scheme: QuantScheme, label: NormalizedLabel | np.ndarray) -> np.ndarray:
    values = label.values if isinstance(label, NormalizedLabel) else np.asarray(label, dtype=np.float64)
    lo, hi = scheme.x_range
    x = (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * (hi - lo) + lo
    with np.errstate(divide="ignore"):
        d = scheme.inverse_transform(x)
    if isinstance(label, NormalizedLabel):
        d = np.where(label.valid_mask, d, np.nan)
    return d


def worst_case_error(scheme: QuantScheme, depth, step: StepModel = StepModel()):
    """Linearized worst-case depth error of one label step; returns ``(abs_error, absrel)``."""
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d < scheme.d_min) or np.any(d > scheme.d_max):
        raise DomainError(f"depth outside [{scheme.d_min}, {scheme.d_max}]")
    dx = scheme.x_step(step)
    if scheme.kind is SchemeKind.UNIFORM:
        err = np.full_like(d, dx)
    elif scheme.kind is SchemeKind.INVERSE:
        err = d**2 * dx  # |d(1/P)/dP| = D^2
    else:
        err = d * dx  # |d(e^X)/dX| = D
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(d > 0, err / np.where(d > 0, d, 1.0), np.inf)
    if err.ndim == 0:
        return float(err), float(rel)
    return err, rel


def distinguishable(scheme: QuantScheme, d1: float, d2: float, step: StepModel = StepModel()) -> bool:
    if d1 == d2:
        return False
    x1, x2 = scheme.transform(d1), scheme.transform(d2)
    return bool(abs(float(x1) - float(x2)) >= scheme.x_step(step))


def percentile_affine(x, valid_mask, rounding: bool = True) -> NormalizedLabel:
    """Affinely map the [2nd, 98th] percentile band of ``x`` onto [-1, 1], clip, round.

    Percentiles use linear interpolation between order statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(valid_mask, dtype=bool) & np.isfinite(x)
    if not mask.any():
        raise DegenerateInputError("no valid pixels to normalize")
    lo, hi = np.percentile(x[mask], PERCENTILES, method="linear")
    if not hi > lo:
        raise DegenerateInputError("2nd and 98th percentiles coincide (constant input)")
    v = ((np.where(mask, x, lo) - lo) / (hi - lo) - 0.5) * 2.0
    v = np.clip(v, -1.0, 1.0)
    if rounding:
        v = bf16_round(v)
    return NormalizedLabel(np.where(mask, v, 0.0), mask, (float(lo), float(hi)))


def percentile_normalize(depth, valid_mask=None, rounding: bool = True) -> NormalizedLabel:
    """Logarithmic label: ln(D + 1e-6), percentile-anchored to [-1, 1], BF16-rounded."""
    d = np.asarray(depth, dtype=np.float64)
    mask = np.isfinite(d) if valid_mask is None else np.asarray(valid_mask, dtype=bool) & np.isfinite(d)
    if np.any(d[mask] < LOG_EPS):
        raise DomainError("depths below 1e-6 m are not supported by the log label")
    with np.errstate(invalid="ignore", divide="ignore"):
        d_log = np.log(np.where(mask, d, 1.0) + LOG_EPS)
    return percentile_affine(d_log, mask, rounding)


def percentile_denormalize(label: NormalizedLabel | np.ndarray, anchors: tuple[float, float]) -> np.ndarray:
    """Invert :func:`percentile_affine` back to the transformed space (no clipping undo)."""
    v = label.values if isinstance(label, NormalizedLabel) else np.asarray(label, dtype=np.float64)
    lo, hi = anchors
    return (v / 2.0 + 0.5) * (hi - lo) + lo


def error_table(schemes, depths, step: StepModel = StepModel()) -> list[dict]:
    rows = []
    for scheme in schemes:
        for d in depths:
            err, rel = worst_case_error(scheme, d, step)
            rows.append(
                {"scheme": scheme.kind.value, "depth_m": float(d), "abs_error_m": err, "absrel": rel}
            )
    return rows


def write_error_csv(path, rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["scheme", "depth_m", "abs_error_m", "absrel"])
        for r in rows:
            w.writerow([r["scheme"], repr(r["depth_m"]), repr(r["abs_error_m"]), repr(r["absrel"])])
