"""Synthetic regression scenes with a controllable dark pixel ratio.

Each scene is a bright ellipse on a dark background. The target is the
normalized ellipse center ``(x, y)`` and the normalized radius as a depth
proxy ``z``. Images are quantized to 8-bit levels so that the PPM files on
disk reproduce them exactly.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import DarkRatioConfig, dark_pixel_ratio

MAX_RHO = 0.995
BRIGHT_MIN = 0.6
MAX_ASPECT = 1.25


class InfeasibleRhoError(ValueError):
    pass


class PPMFormatError(ValueError):
    pass


@dataclass
class Scene:
    image: np.ndarray
    target: tuple
    rho_actual: float


@dataclass
class Dataset:
    images: np.ndarray
    targets: np.ndarray
    rho: np.ndarray = None
    rho_target: np.ndarray = None

    def __len__(self):
        return len(self.images)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.images[idx], self.targets[idx], pick(self.rho), pick(self.rho_target))


@dataclass
class DatasetManifest:
    items: list
    seed: int
    params: dict = field(default_factory=dict)
    root: Path = Path(".")

    def to_json(self) -> dict:
        return {"seed": self.seed, "params": self.params, "items": self.items}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        if not d.get("items"):
            raise ValueError(f"{path}: manifest has no items")
        m = cls(d["items"], d["seed"], d.get("params", {}), path.parent)
        for item in m.items:
            if not (m.root / item["path"]).exists():
                raise FileNotFoundError(f"{path}: missing image {item['path']}")
        return m

    def load_dataset(self) -> Dataset:
        images = np.stack([read_image(self.root / it["path"]) for it in self.items])
        targets = np.array([it["target"] for it in self.items], dtype=np.float64)
        rho = np.array([it["rho"] for it in self.items], dtype=np.float64)
        rho_t = np.array([it.get("rho_target", it["rho"]) for it in self.items], dtype=np.float64)
        return Dataset(images, targets, rho, rho_t)


def _quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def gen_scene(h: int, w: int, rho_target: float, noise_sigma: float = 0.005, seed: int = 0,
              *, channels: int = 3, background: float = 0.02) -> Scene:
    """Render one ellipse scene whose bright area is about ``1 - rho_target``."""
    if h < 8 or w < 8:
        raise ValueError(f"image must be at least 8x8, got {h}x{w}")
    if not 0.0 <= rho_target <= MAX_RHO:
        raise InfeasibleRhoError(f"rho_target must lie in [0, {MAX_RHO}], got {rho_target}")
    rng = np.random.default_rng(seed)
    r = math.sqrt((1.0 - rho_target) * h * w / math.pi)
    if 2 * r > min(h, w):
        lowest = 1.0 - math.pi * min(h, w) ** 2 / (4.0 * h * w)
        raise InfeasibleRhoError(
            f"rho_target={rho_target} needs radius {r:.2f}; blob fits only for rho >= {lowest:.3f}")
    # aspect = a / b with a * b = r**2, limited so the ellipse stays inside the frame
    lo = max(1.0 / MAX_ASPECT, (2 * r / h) ** 2)
    hi = min(MAX_ASPECT, (w / (2 * r)) ** 2)
    aspect = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    a, b = r * math.sqrt(aspect), r / math.sqrt(aspect)
    cx = rng.uniform(a, w - a)
    cy = rng.uniform(b, h - b)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    mask = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0

    level = rng.uniform(BRIGHT_MIN, 1.0)
    tint = np.clip(level + rng.uniform(-0.05, 0.05, size=channels), BRIGHT_MIN, 1.0)
    image = np.full((channels, h, w), background)
    image[:, mask] = tint[:, None]
    if noise_sigma > 0:
        image = image + rng.normal(0.0, noise_sigma, size=image.shape)
    image = _quantize(image)
    target = (cx / w, cy / h, r / min(h, w))
    return Scene(image, target, dark_pixel_ratio(image, DarkRatioConfig()))


def make_dataset(n: int, h: int, w: int, rho_values, noise_sigma: float = 0.005,
                 seed: int = 0) -> Dataset:
    """``n`` in-memory scenes per rho value, seeds assigned round-robin."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scenes, rho_t = [], []
    seeds = np.random.SeedSequence(seed).generate_state(n * len(rho_values), dtype=np.uint64)
    k = 0
    for j in range(n):
        for rho in rho_values:
            scenes.append(gen_scene(h, w, rho, noise_sigma, int(seeds[k])))
            rho_t.append(rho)
            k += 1
    return Dataset(np.stack([s.image for s in scenes]),
                   np.array([s.target for s in scenes]),
                   np.array([s.rho_actual for s in scenes]),
                   np.array(rho_t, dtype=np.float64))


def gen_dataset(n: int, h: int, w: int, rho_values, noise_sigma: float, seed: int,
                out_dir) -> DatasetManifest:
    """Write ``n`` PPM scenes per rho value plus ``manifest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(n, h, w, list(rho_values), noise_sigma, seed)
    items = []
    for i in range(len(ds)):
        name = f"img_{i:05d}.ppm"
        write_image(ds.images[i], out_dir / name)
        items.append({"path": name,
                      "target": [float(v) for v in ds.targets[i]],
                      "rho": float(ds.rho[i]),
                      "rho_target": float(ds.rho_target[i])})
    params = {"n": n, "h": h, "w": w, "rho_values": [float(r) for r in rho_values],
              "noise_sigma": noise_sigma}
    manifest = DatasetManifest(items, seed, params, out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


# --------------------------------------------------------------------------
# binary PPM (P6, maxval 255)

def write_image(image, path) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    if image.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {image.shape[0]}")
    _, h, w = image.shape
    pix = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_image(path) -> np.ndarray:
    """Read a P6 PPM as a ``[3, H, W]`` float64 array in [0, 1]."""
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise PPMFormatError(f"{path}: truncated header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise PPMFormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PPMFormatError(f"{path}: malformed header") from None
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise PPMFormatError(f"{path}: unsupported geometry or maxval")
    pos += 1  # single whitespace byte before the raster
    data = raw[pos:pos + 3 * w * h]
    if len(data) != 3 * w * h:
        raise PPMFormatError(f"{path}: raster has {len(data)} bytes, expected {3 * w * h}")
    pix = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return pix.astype(np.float64) / maxval
