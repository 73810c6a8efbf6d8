"""Procedural scenes with exact depth and analytic surface normals.

Projection is orthographic. Camera frame: +x right, +y up, +z toward the
viewer; a surface point seen at pixel (x, y) with depth D sits at
(x, y, -D), so its normal is proportional to (dD/dx, dD/dy, 1).

Pixel (row, col) maps to x = (col - W//2) * ps, y = (H//2 - row) * ps, which
puts an exact pixel centre on the optical axis.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .depth_codec import percentile_normalize
from .errors import ConfigError, ContractError, CorruptionError

D_MIN, D_MAX = 0.1, 80.0
LIGHT = np.array([0.3, 0.4, 0.866]) / np.linalg.norm([0.3, 0.4, 0.866])
FOG_DEPTH = 40.0
INDOOR_EXTENT = 2.0
OUTDOOR_EXTENT = 100.0
GRAZING_NZ = 0.3
MANIFEST_VERSION = 1
NORMAL_CONVENTION = "camera frame, +x right, +y up, +z toward viewer; PF channels (nx, ny, nz) in [-1, 1]"


class Pool(str, enum.Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"


KINDS = ("plane", "sphere", "wedge", "composite")


@dataclass
class SceneSample:
    image_proxy: np.ndarray
    depth: np.ndarray
    normals: np.ndarray
    valid_mask: np.ndarray
    pool: Pool
    kind: str
    pixel_size: float
    # smooth-surface pixels away from silhouettes, creases, borders and grazing angles
    interior_mask: np.ndarray = field(default=None)

    @property
    def resolution(self) -> int:
        return self.depth.shape[0]


class _Canvas:
    """Z-buffer of surfaces; each surface gets its own id for discontinuity masking."""

    def __init__(self, res: int, extent: float):
        self.res = res
        self.ps = extent / res
        idx = np.arange(res)
        self.x = np.broadcast_to((idx - res // 2) * self.ps, (res, res))
        self.y = np.broadcast_to(((res // 2) - idx)[:, None] * self.ps, (res, res))
        self.depth = np.full((res, res), np.inf)
        self.normals = np.zeros((res, res, 3))
        self.normals[..., 2] = 1.0
        self.surface = np.full((res, res), -1)
        self._next = 0

    def draw(self, depth, normals, region=None):
        region = np.isfinite(depth) if region is None else region & np.isfinite(depth)
        win = region & (depth < self.depth)
        self.depth[win] = depth[win]
        self.normals[win] = normals[win]
        self.surface[win] = self._next
        self._next += 1

    def plane(self, a, b, c, region=None):
        """Surface z = a x + b y + c, i.e. D = -(a x + b y + c), normal (-a, -b, 1)."""
        d = -(a * self.x + b * self.y + c)
        n = np.broadcast_to(np.array([-a, -b, 1.0]) / np.sqrt(a * a + b * b + 1.0), (self.res, self.res, 3))
        self.draw(d, n, region)

    def sphere(self, cx, cy, cz, r):
        """Sphere centred at (cx, cy, -cz); only the front cap is visible."""
        dx, dy = self.x - cx, self.y - cy
        h2 = r * r - dx * dx - dy * dy
        inside = h2 > 0
        h = np.sqrt(np.where(inside, h2, 0.0))
        d = np.where(inside, cz - h, np.inf)
        n = np.stack([dx, dy, h], axis=-1) / r
        self.draw(d, n, inside)

    def wedge(self, x0, c, slope, tilt):
        """Two facets D = c + slope*|x - x0| + tilt*y meeting at a vertical crease."""
        for side in (-1.0, 1.0):
            region = (self.x - x0) * side >= 0
            # D = c + slope*side*(x - x0) + tilt*y
            self.plane(-slope * side, -tilt, -(c - slope * side * x0), region)


def _render(canvas: _Canvas, pool: Pool, kind: str) -> SceneSample:
    depth = canvas.depth
    valid = np.isfinite(depth) & (depth >= D_MIN) & (depth <= D_MAX)
    normals = canvas.normals.copy()
    lambert = np.clip(normals @ LIGHT, 0.0, 1.0)
    shade = np.where(valid, lambert * np.exp(-np.where(valid, depth, 0.0) / FOG_DEPTH), 1.0)
    # stored as 8-bit levels so PNG persistence is lossless
    proxy = np.rint(shade * 255.0) / 255.0
    depth = np.where(valid, depth, np.nan)
    return SceneSample(proxy, depth, normals, valid, pool, kind, canvas.ps, _interior(canvas, valid, normals))


def _interior(canvas: _Canvas, valid, normals) -> np.ndarray:
    surf = np.where(valid, canvas.surface, -1)
    same = np.ones_like(valid)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            same &= np.roll(np.roll(surf, dr, axis=0), dc, axis=1) == surf
    border = np.zeros_like(valid)
    border[[0, -1], :] = True
    border[:, [0, -1]] = True
    return valid & same & ~border & (surf >= 0) & (normals[..., 2] >= GRAZING_NZ)


def generate_scene(kind: str, resolution: int, seed: int, pool: Pool | str = Pool.INDOOR, **params) -> SceneSample:
    """Render one scene.

    ``params`` pin the primitive's geometry (``a``, ``b``, ``c`` for a plane;
    ``center``/``radius`` for a sphere); anything unset is drawn from ``seed``.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown primitive {kind!r}; choose from {KINDS}")
    if resolution < 8:
        raise ConfigError("resolution must be >= 8")
    pool = Pool(pool)
    rng = np.random.default_rng(seed)
    if pool is Pool.OUTDOOR:
        canvas = _Canvas(resolution, extent=OUTDOOR_EXTENT)
        _outdoor(canvas, rng)
        return _render(canvas, pool, kind)
    canvas = _Canvas(resolution, extent=INDOOR_EXTENT)
    if kind == "plane":
        a = params.get("a", rng.uniform(0.2, 1.0) * rng.choice([-1.0, 1.0]))
        b = params.get("b", rng.uniform(0.2, 1.0) * rng.choice([-1.0, 1.0]))
        c = params.get("c", -rng.uniform(3.0, 6.0))
        canvas.plane(a, b, c)
    elif kind == "sphere":
        _background(canvas, rng, params)
        cx, cy, cz = params.get("center", (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(3.0, 5.0)))
        canvas.sphere(cx, cy, cz, params.get("radius", rng.uniform(0.5, 0.8)))
    elif kind == "wedge":
        canvas.wedge(
            params.get("x0", rng.uniform(-0.3, 0.3)),
            params.get("c", rng.uniform(3.0, 5.0)),
            params.get("slope", rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 1.5)),
            params.get("tilt", rng.uniform(-0.6, 0.6)),
        )
    else:
        _background(canvas, rng, params)
        for _ in range(rng.integers(1, 4)):
            canvas.sphere(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(1.5, 6.0), rng.uniform(0.2, 0.6))
        if rng.random() < 0.5:
            x0 = rng.uniform(-0.5, 0.5)
            canvas.wedge(x0, rng.uniform(1.0, 4.0), rng.uniform(0.3, 1.2), rng.uniform(-0.5, 0.5))
    return _render(canvas, pool, kind)


def _background(canvas: _Canvas, rng, params):
    # generic tilt on both axes so no row or column of depth is constant
    a = params.get("bg_a", rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0]))
    b = params.get("bg_b", rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0]))
    canvas.plane(a, b, -params.get("bg_c", rng.uniform(5.0, 7.0)))


def _outdoor(canvas: _Canvas, rng):
    # ground plane receding upward to a horizon; depth 4-6 m at the bottom edge
    half = canvas.res // 2 * canvas.ps
    horizon = rng.uniform(0.3, 0.6) * half
    near = rng.uniform(4.0, 6.0)
    b = (D_MAX - near) / (horizon + half) * rng.uniform(1.0, 1.05)
    a = rng.uniform(0.01, 0.03) * rng.choice([-1.0, 1.0])
    # D = near + b (y + half) + a x  ->  z = -D
    canvas.plane(-a, -b, -(near + b * half))
    for _ in range(rng.integers(2, 5)):
        w, h = rng.uniform(5.0, 20.0), rng.uniform(5.0, 25.0)
        x0, y0 = rng.uniform(-half, half - w), rng.uniform(-half, 0.0)
        d = rng.uniform(8.0, 70.0)
        region = (canvas.x >= x0) & (canvas.x <= x0 + w) & (canvas.y >= y0) & (canvas.y <= y0 + h)
        # box faces lean slightly so their depth is not constant
        canvas.plane(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), -d, region)


# -- geometry helpers -------------------------------------------------------------


def normals_from_depth(depth: np.ndarray, pixel_size: float) -> np.ndarray:
    """Central-difference normals (dD/dx, dD/dy, 1), normalized; rows run against +y."""
    d = np.asarray(depth, dtype=np.float64)
    d_row, d_col = np.gradient(d, pixel_size)
    n = np.stack([d_col, -d_row, np.ones_like(d)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def angular_error_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)))


def consistency_error(sample: SceneSample) -> float:
    """Mean angle between finite-difference and analytic normals over the interior mask."""
    if not sample.interior_mask.any():
        return float("nan")
    fd = normals_from_depth(np.where(sample.valid_mask, sample.depth, 0.0), sample.pixel_size)
    return float(angular_error_deg(fd, sample.normals)[sample.interior_mask].mean())


def label_inside_fraction(sample: SceneSample) -> float:
    label = percentile_normalize(sample.depth, sample.valid_mask)
    v = label.values[label.valid_mask]
    return float(np.mean(np.abs(v) < 1.0))


# -- sampling and persistence -----------------------------------------------------


def draw_pool(rng: np.random.Generator, mix=(0.9, 0.1)) -> Pool:
    return Pool.INDOOR if rng.random() < mix[0] else Pool.OUTDOOR


def sample_batch(pools, batch_size: int, rng: np.random.Generator, mix=(0.9, 0.1)) -> list[SceneSample]:
    """Draw each sample independently: indoor pool with probability mix[0], else outdoor."""
    indoor, outdoor = pools
    if (mix[0] > 0 and not indoor) or (mix[1] > 0 and not outdoor):
        raise ContractError("cannot sample from an empty pool")
    out = []
    for _ in range(batch_size):
        src = indoor if draw_pool(rng, mix) is Pool.INDOOR else outdoor
        out.append(src[rng.integers(len(src))])
    return out


def generate_dataset(count: int, resolution: int, seed: int, mix=(0.9, 0.1)) -> list[SceneSample]:
    """Scenes with per-sample RNG streams derived from (seed, index)."""
    samples = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        pool = draw_pool(rng, mix)
        kind = "composite" if pool is Pool.OUTDOOR else str(rng.choice(["composite", "composite", "sphere", "wedge", "plane"]))
        samples.append(generate_scene(kind, resolution, int(rng.integers(2**31)), pool))
    return samples


def draw_pools(count: int, seed: int, mix=(0.9, 0.1)) -> list[Pool]:
    """Pool assignment of :func:`generate_dataset` without rendering."""
    return [draw_pool(np.random.default_rng([seed, i]), mix) for i in range(count)]


def _mask_png_levels(sample: SceneSample) -> np.ndarray:
    # 0 invalid, 128/255 valid edge, 1 valid interior
    m = np.where(sample.valid_mask, 128.0 / 255.0, 0.0)
    return np.where(sample.interior_mask, 1.0, m)


def save_dataset(samples, directory, seed: int | None = None, mix=(0.9, 0.1), extra: dict | None = None) -> dict:
    """Write PFM depth/normals, PNG proxy and mask, and ``manifest.json``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        stem = f"scene_{i:05d}"
        files = {
            "depth": f"{stem}_depth.pfm",
            "normals": f"{stem}_normals.pfm",
            "image": f"{stem}_image.png",
            "mask": f"{stem}_mask.png",
        }
        io.write_pfm(directory / files["depth"], np.where(s.valid_mask, s.depth, 0.0))
        io.write_pfm(directory / files["normals"], s.normals)
        io.write_png8(directory / files["image"], s.image_proxy)
        io.write_png8(directory / files["mask"], _mask_png_levels(s))
        entries.append(
            {
                "index": i,
                "pool": s.pool.value,
                "kind": s.kind,
                "pixel_size": s.pixel_size,
                "files": {k: {"path": v, "sha256": io.sha256_file(directory / v)} for k, v in files.items()},
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "count": len(samples),
        "resolution": samples[0].resolution if samples else None,
        "mix": list(mix),
        "normal_convention": NORMAL_CONVENTION,
        "samples": entries,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory) -> tuple[dict, list[SceneSample]]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{directory}/manifest.json is not valid JSON") from exc
    samples = []
    for e in manifest["samples"]:
        for key, f in e["files"].items():
            path = directory / f["path"]
            if not path.exists():
                raise CorruptionError(f"missing file {path}")
            if io.sha256_file(path) != f["sha256"]:
                raise CorruptionError(f"checksum mismatch for {path}")
        files = {k: directory / f["path"] for k, f in e["files"].items()}
        mask_levels = np.rint(io.read_png8(files["mask"]) * 255).astype(int)
        valid = mask_levels > 0
        depth = io.read_pfm(files["depth"]).astype(np.float64)
        samples.append(
            SceneSample(
                image_proxy=io.read_png8(files["image"]),
                depth=np.where(valid, depth, np.nan),
                normals=io.read_pfm(files["normals"]).astype(np.float64),
                valid_mask=valid,
                pool=Pool(e["pool"]),
                kind=e["kind"],
                pixel_size=float(e["pixel_size"]),
                interior_mask=mask_levels == 255,
            )
        )
    return manifest, samples


def to_float32(sample: SceneSample) -> SceneSample:
    """The sample as it reads back from disk (32-bit depth and normals)."""
    return SceneSample(
        sample.image_proxy,
        np.where(sample.valid_mask, sample.depth.astype(np.float32).astype(np.float64), np.nan),
        sample.normals.astype(np.float32).astype(np.float64),
        sample.valid_mask,
        sample.pool,
        sample.kind,
        sample.pixel_size,
        sample.interior_mask,
    )
