"""Procedural paired datasets and bit-exact PPM image I/O.

Scenes are random colored rectangles and ellipses on a uniform
background; each task kind derives a (condition, target) pair from the
clean scene.  Regeneration from (kind, seed, count) is bitwise identical.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .rng import rng_stream

TASK_KINDS = ("invert", "edge_fill", "checker_colorize", "blur_sharpen")


class DataError(ValueError):
    pass


class PpmError(ValueError):
    """Malformed PPM header or payload."""


@dataclass
class PairedDataset:
    name: str
    pairs: list  # [(condition, target)], each (h,w,3) in [-1,1]
    train_indices: list
    val_indices: list
    seed: int

    def train_pairs(self):
        return [self.pairs[i] for i in self.train_indices]

    def val_pairs(self):
        return [self.pairs[i] for i in self.val_indices]


# ---------------------------------------------------------------------------
# scene synthesis

def _draw_scene(rng, size):
    img = np.empty((size, size, 3))
    img[:, :] = rng.uniform(-1.0, 1.0, 3)
    yy, xx = np.mgrid[0:size, 0:size]
    n_shapes = int(rng.integers(3, 7))
    for _ in range(n_shapes):
        color = rng.uniform(-1.0, 1.0, 3)
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size / 10, size / 3, 2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[mask] = color
    return img


def _edge_map(scene, threshold=0.15):
    diff = np.zeros(scene.shape[:2], dtype=bool)
    for axis in (0, 1):
        d = np.abs(np.diff(scene, axis=axis)).max(axis=2) > threshold
        if axis == 0:
            diff[1:] |= d
            diff[:-1] |= d
        else:
            diff[:, 1:] |= d
            diff[:, :-1] |= d
    return np.where(diff[:, :, None], 1.0, -1.0) * np.ones(3)


def _box_blur(scene):
    pad = np.pad(scene, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(scene)
    for u in range(3):
        for v in range(3):
            out += pad[u:u + scene.shape[0], v:v + scene.shape[1]]
    return out / 9.0


def _checker_gray(scene, cell=4):
    gray = scene.mean(axis=2, keepdims=True) * np.ones(3)
    yy, xx = np.mgrid[0:scene.shape[0], 0:scene.shape[1]]
    checker = ((yy // cell + xx // cell) % 2 == 0)[:, :, None]
    return np.where(checker, gray, scene)


def _make_pair(kind, scene):
    if kind == "invert":
        return scene, -scene
    if kind == "edge_fill":
        return _edge_map(scene), scene
    if kind == "checker_colorize":
        return _checker_gray(scene), scene
    if kind == "blur_sharpen":
        return _box_blur(_box_blur(scene)), scene
    raise DataError(f"unknown task kind {kind!r}")


def synth_task(kind, seed, count, size=32):
    """Deterministic paired dataset for one task kind."""
    if kind not in TASK_KINDS:
        raise DataError(f"unknown task kind {kind!r}")
    if count < 10:
        raise DataError(f"count must be >= 10, got {count}")
    if size != 32:
        raise DataError(f"unsupported size {size}")
    pairs = []
    for i in range(count):
        scene = _draw_scene(rng_stream(seed, "scene", i), size)
        cond, target = _make_pair(kind, scene)
        pairs.append((np.clip(cond, -1.0, 1.0), np.clip(target, -1.0, 1.0)))
    perm = rng_stream(seed, "split").permutation(count)
    n_val = max(1, count // 10)
    val = sorted(int(i) for i in perm[:n_val])
    train = sorted(int(i) for i in perm[n_val:])
    return PairedDataset(name=kind, pairs=pairs, train_indices=train,
                         val_indices=val, seed=seed)


# ---------------------------------------------------------------------------
# PPM (binary P6) I/O

def write_ppm(image, path):
    """Quantize [-1,1] to bytes with round-half-up and write binary P6."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PpmError(f"image must be (h,w,3), got {image.shape}")
    h, w, _ = image.shape
    q = np.floor((image + 1.0) * 127.5 + 0.5)
    q = np.clip(q, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PpmError(f"truncated header in {path}")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise PpmError(f"not a binary PPM: magic {fields[0]!r}")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise PpmError(f"malformed header fields in {path}") from None
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval}")
    if w <= 0 or h <= 0 or w * h > 1 << 24:
        raise PpmError(f"bad extents {w}x{h}")
    payload = blob[pos:pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise PpmError(f"payload length {len(payload)} != {3 * w * h}")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return q.astype(np.float64) / 127.5 - 1.0


def export_dataset(ds, root):
    """Write `<root>/<task>/<split>/<index>_{cond|target}.ppm`."""
    for split, indices in (("train", ds.train_indices), ("val", ds.val_indices)):
        d = os.path.join(root, ds.name, split)
        os.makedirs(d, exist_ok=True)
        for i in indices:
            cond, target = ds.pairs[i]
            write_ppm(cond, os.path.join(d, f"{i:04d}_cond.ppm"))
            write_ppm(target, os.path.join(d, f"{i:04d}_target.ppm"))
