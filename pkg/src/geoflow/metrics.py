"""Affine-invariant depth metrics and surface-normal angular metrics.

Depth predictions are first aligned to ground truth by least-squares scale
and shift over the valid mask, then scored with AbsRel and delta1. Normal
predictions are scored by the clamped arccos angle to ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

DEPTH_FLOOR = 1e-6
DELTA1_THRESHOLD = 1.25
ANGLE_THRESHOLD_DEG = 11.25


def _mask(gt, mask) -> np.ndarray:
    return np.ones(np.shape(gt), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)


@dataclass
class Alignment:
    scale: float
    shift: float
    aligned: np.ndarray


def affine_align(pred, gt, mask=None, space: str = "depth") -> Alignment:
    """Closed-form (s, t) = argmin sum (s * pred + t - target)^2 over the mask.

    ``space="disparity"`` fits in 1/gt and returns the aligned prediction
    converted back to depth.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    m = _mask(gt, mask) & np.isfinite(pred) & np.isfinite(gt)
    if space == "disparity":
        m &= gt > 0
        target = np.where(m, 1.0 / np.where(m, gt, 1.0), 0.0)
    elif space == "depth":
        target = gt
    else:
        raise ValueError(f"unknown alignment space {space!r}")
    x, y = pred[m], target[m]
    if x.size < 2:
        raise DegenerateInputError("alignment needs at least two valid pixels")
    # 2x2 normal equations on centred data
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if not sxx > 0 or np.ptp(x) == 0:
        raise DegenerateInputError("prediction is constant on the valid mask; scale is undetermined")
    s = float(np.sum((x - xm) * (y - ym)) / sxx)
    t = float(ym - s * xm)
    aligned = s * pred + t
    if space == "disparity":
        with np.errstate(divide="ignore"):
            aligned = 1.0 / np.maximum(aligned, DEPTH_FLOOR)
    return Alignment(s, t, aligned)


def _depth_inputs(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    m = _mask(gt, mask)
    if not m.any():
        raise ContractError("valid mask is empty")
    if np.any(~(gt[m] > 0)):
        raise ContractError("ground truth must be positive on the valid mask")
    return pred[m], gt[m]


def absrel(pred, gt, mask=None) -> float:
    d, g = _depth_inputs(pred, gt, mask)
    return float(np.mean(np.abs(d - g) / g))


def delta1(pred, gt, mask=None, threshold: float = DELTA1_THRESHOLD) -> float:
    """Fraction with max(d/gt, gt/d) < threshold; predictions are floored at 1e-6 m first."""
    d, g = _depth_inputs(pred, gt, mask)
    d = np.maximum(d, DEPTH_FLOOR)
    ratio = np.maximum(d / g, g / d)
    return float(np.mean(ratio < threshold))


def floored_count(pred, mask=None) -> int:
    pred = np.asarray(pred, dtype=np.float64)
    m = _mask(pred, mask)
    return int(np.sum(pred[m] < DEPTH_FLOOR))


def angular_errors(pred_normals, gt_normals, mask=None) -> np.ndarray:
    """Per-pixel angle in degrees over the usable mask (zero-length vectors dropped)."""
    p = np.asarray(pred_normals, dtype=np.float64)
    g = np.asarray(gt_normals, dtype=np.float64)
    if p.shape != g.shape or p.shape[-1] != 3:
        raise ShapeError(f"normal grids must share a [..., 3] shape, got {p.shape} and {g.shape}")
    m = np.ones(g.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    pn = np.linalg.norm(p, axis=-1)
    gn = np.linalg.norm(g, axis=-1)
    m = m & (pn > 0) & (gn > 0) & np.isfinite(pn) & np.isfinite(gn)
    if not m.any():
        raise ContractError("no usable normals on the valid mask")
    dots = np.sum((p[m] / pn[m, None]) * (g[m] / gn[m, None]), axis=-1)
    return np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))


def mean_angular_error(pred_normals, gt_normals, mask=None) -> float:
    return float(np.mean(angular_errors(pred_normals, gt_normals, mask)))


def within_11_25(pred_normals, gt_normals, mask=None, threshold_deg: float = ANGLE_THRESHOLD_DEG) -> float:
    return float(np.mean(angular_errors(pred_normals, gt_normals, mask) < threshold_deg))


@dataclass
class MetricReport:
    dataset: str
    n_valid: int
    absrel: float = float("nan")
    delta1: float = float("nan")
    mean_err_deg: float = float("nan")
    within_11_25: float = float("nan")
    floored: int = 0
    extra: dict = field(default_factory=dict)

    def csv_row(self) -> list:
        # ratios reported as percentages, as in benchmark tables
        return [
            self.dataset,
            self.n_valid,
            f"{100 * self.absrel:.6f}",
            f"{100 * self.delta1:.6f}",
            f"{self.mean_err_deg:.6f}",
            f"{100 * self.within_11_25:.6f}",
        ] + list(self.extra.values())


REPORT_HEADER = ["dataset", "n_valid", "absrel", "delta1", "mean_err_deg", "within_11_25"]


def evaluate_depth(pred, gt, mask=None, space: str = "depth") -> dict:
    fit = affine_align(pred, gt, mask, space)
    return {
        "scale": fit.scale,
        "shift": fit.shift,
        "absrel": absrel(np.maximum(fit.aligned, DEPTH_FLOOR), gt, mask),
        "delta1": delta1(fit.aligned, gt, mask),
        "floored": floored_count(fit.aligned, mask),
    }


def write_report(path, reports: list[MetricReport]) -> None:
    """One CSV row per report; keys of ``extra`` (taken from the first report) become trailing columns."""
    extra = list(reports[0].extra) if reports else []
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_HEADER + extra)
        for r in reports:
            w.writerow(r.csv_row())
