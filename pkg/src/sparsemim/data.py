"""Image I/O (binary PPM), synthetic datasets, and minimal augmentation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageRecord",
    "DatasetManifest",
    "PpmError",
    "load_ppm",
    "save_ppm",
    "SynthDataset",
    "DirectoryDataset",
    "synth_dataset",
    "hflip",
    "augment",
]


class PpmError(ValueError):
    pass


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray  # [3, H, W] float64 in [0, 1]
    source: str


@dataclass
class DatasetManifest:
    root: str
    entries: list  # [{"id": ..., "path": ...}], ordered lexicographically by id

    def to_json(self) -> str:
        return json.dumps(self.entries, sort_keys=True, indent=2)


def _read_token(buf: bytes, pos: int):
    """Next whitespace-delimited PPM header token, skipping # comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PpmError("unexpected end of PPM header")
    return buf[start:pos], pos


def load_ppm(path) -> np.ndarray:
    """Decode a binary P6 PPM with maxval 255 to a [3,H,W] float array in [0,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P6":
        raise PpmError(f"{path}: bad magic {buf[:2]!r}, expected b'P6'")
    pos = 2
    tok, pos = _read_token(buf, pos)
    try:
        width = int(tok)
        tok, pos = _read_token(buf, pos)
        height = int(tok)
        tok, pos = _read_token(buf, pos)
        maxval = int(tok)
    except ValueError as e:
        raise PpmError(f"{path}: malformed header token") from e
    if maxval != 255:
        raise PpmError(f"{path}: maxval {maxval} unsupported, expected 255")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    body = buf[pos : pos + need]
    if len(body) < need:
        raise PpmError(f"{path}: truncated payload, {len(body)} of {need} bytes")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1).astype(np.float64) / 255.0)


def save_ppm(path, img: np.ndarray):
    """Encode a [3,H,W] float array to binary P6; rounds half away from zero."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise PpmError(f"save_ppm: expected [3,H,W] array, got {img.shape}")
    q = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = img.shape[1], img.shape[2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.transpose(1, 2, 0).tobytes())


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------


def _synth_image(size: int, seed: int, index: int) -> np.ndarray:
    """One deterministic synthetic image: a strong color ramp plus a few
    translucent rectangles and soft-edged circles. Guaranteed non-degenerate
    (per-image pixel std stays above 0.05)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)

    theta = rng.uniform(0.0, 2.0 * np.pi)
    ramp = xs * np.cos(theta) + ys * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    c0 = rng.uniform(0.0, 0.30, 3)
    c1 = rng.uniform(0.70, 1.0, 3)
    if rng.random() < 0.5:
        c0, c1 = c1, c0
    img = c0[:, None, None] + ramp[None] * (c1 - c0)[:, None, None]

    base = img.copy()
    for _ in range(int(rng.integers(0, 3))):
        rh = int(rng.integers(size // 8, size // 2))
        rw = int(rng.integers(size // 8, size // 2))
        r0 = int(rng.integers(0, size - rh + 1))
        cx0 = int(rng.integers(0, size - rw + 1))
        color = rng.uniform(0.0, 1.0, 3)
        alpha = rng.uniform(0.4, 0.85)
        img[:, r0 : r0 + rh, cx0 : cx0 + rw] *= 1.0 - alpha
        img[:, r0 : r0 + rh, cx0 : cx0 + rw] += alpha * color[:, None, None]
    for _ in range(int(rng.integers(0, 3))):
        cy, cx = rng.uniform(0, size, 2)
        radius = rng.uniform(size / 10, size / 3)
        color = rng.uniform(0.0, 1.0, 3)
        alpha = rng.uniform(0.4, 0.85)
        dist = np.sqrt((np.mgrid[0:size][:, None] - cy) ** 2 + (np.mgrid[0:size][None, :] - cx) ** 2)
        wgt = np.clip(radius - dist, 0.0, 1.0) * alpha  # one-pixel feathered edge
        img = img * (1.0 - wgt[None]) + color[:, None, None] * wgt[None]

    img = np.clip(img, 0.0, 1.0)
    if img.std() < 0.06:  # overlays flattened it; keep the guaranteed ramp
        img = np.clip(base, 0.0, 1.0)
    return img


class SynthDataset:
    """Deterministic in-memory dataset of procedural images."""

    def __init__(self, n: int, size: int, seed: int):
        self.n = n
        self.size = size
        self.seed = seed

    def __len__(self):
        return self.n

    def pixels(self, i: int) -> np.ndarray:
        if not (0 <= i < self.n):
            raise IndexError(i)
        return _synth_image(self.size, self.seed, i)

    def record(self, i: int) -> ImageRecord:
        return ImageRecord(id=f"synth-{i:06d}", pixels=self.pixels(i),
                           source=f"synth:{self.seed}:{self.size}")

    def manifest(self) -> DatasetManifest:
        return DatasetManifest(
            root="",
            entries=[{"id": f"synth-{i:06d}", "path": f"synth:{self.seed}:{self.size}:{i}"} for i in range(self.n)],
        )

    def materialize(self, out_dir) -> DatasetManifest:
        os.makedirs(out_dir, exist_ok=True)
        entries = []
        for i in range(self.n):
            name = f"synth-{i:06d}.ppm"
            save_ppm(os.path.join(out_dir, name), self.pixels(i))
            entries.append({"id": f"synth-{i:06d}", "path": name})
        manifest = DatasetManifest(root=str(out_dir), entries=entries)
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            f.write(manifest.to_json())
        return manifest


def synth_dataset(n: int, size: int, seed: int) -> SynthDataset:
    return SynthDataset(n, size, seed)


class DirectoryDataset:
    """All *.ppm files under a directory, ordered lexicographically by name."""

    def __init__(self, root):
        self.root = str(root)
        names = sorted(f for f in os.listdir(self.root) if f.endswith(".ppm"))
        if not names:
            raise FileNotFoundError(f"no .ppm files under {self.root}")
        self.names = names

    def __len__(self):
        return len(self.names)

    def pixels(self, i: int) -> np.ndarray:
        return load_ppm(os.path.join(self.root, self.names[i]))

    def manifest(self) -> DatasetManifest:
        return DatasetManifest(root=self.root,
                               entries=[{"id": n[:-4], "path": n} for n in self.names])


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, :, ::-1])


def augment(img: np.ndarray, out_size: int, rng) -> np.ndarray:
    """Random crop to out_size x out_size (uniform valid offsets), then a
    coin-flip horizontal mirror. No color transforms."""
    c, h, w = img.shape
    if h < out_size or w < out_size:
        raise ValueError(f"augment: image {h}x{w} smaller than crop {out_size}")
    oy = int(rng.integers(0, h - out_size + 1))
    ox = int(rng.integers(0, w - out_size + 1))
    out = img[:, oy : oy + out_size, ox : ox + out_size]
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)
