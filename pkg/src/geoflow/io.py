"""Grid file formats: PFM (float32), 8-bit and 16-bit grayscale PNG."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorruptionError

_HEADER_RE = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def write_pfm(path, grid) -> None:
    """Write a 2-D (``Pf``) or H x W x 3 (``PF``) grid as little-endian PFM.

    Rows are stored bottom-to-top, as the format prescribes.
    """
    arr = np.asarray(grid, dtype=np.float32)
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds H x W or H x W x 3 grids, got shape {arr.shape}")
    h, w = arr.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(np.flipud(arr)).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _HEADER_RE.match(raw)
    if m is None:
        raise CorruptionError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    body = raw[m.end():]
    if len(body) != 4 * n:
        raise CorruptionError(f"{path}: expected {4 * n} data bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(arr.reshape(shape)).copy()


def write_png8(path, grid) -> None:
    """Write values in [0, 1] as 8-bit grayscale (round to nearest of 255 levels)."""
    arr = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255).astype(np.uint8)).save(path, format="PNG")


def read_png8(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise CorruptionError(f"{path}: unreadable PNG ({exc})") from exc
    return arr.astype(np.float64) / 255.0


def write_depth_png16(path, depth, scale: float = 1000.0, valid_mask=None) -> Path:
    """Store depth * scale as uint16 PNG; zero marks invalid. Writes ``<stem>.json`` alongside."""
    path = Path(path)
    d = np.asarray(depth, dtype=np.float64)
    mask = np.isfinite(d) if valid_mask is None else np.asarray(valid_mask, bool) & np.isfinite(d)
    q = np.rint(np.where(mask, d, 0.0) * scale)
    if np.any(q[mask] < 1) or np.any(q > 65535):
        raise ValueError(f"depth * {scale} does not fit the uint16 range [1, 65535]")
    Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"scale": scale, "invalid_value": 0, "unit": "m"}, indent=2) + "\n")
    return sidecar


def read_depth_png16(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    try:
        with Image.open(path) as im:
            im.load()
            q = np.asarray(im).astype(np.float64)
    except (OSError, SyntaxError) as exc:
        raise CorruptionError(f"{path}: unreadable PNG ({exc})") from exc
    mask = q != meta.get("invalid_value", 0)
    return np.where(mask, q / float(meta["scale"]), np.nan), mask


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
