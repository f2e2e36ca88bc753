"""Synthetic rainy-image corpus and dataset I/O.

Clean scenes are procedural (gradients, rectangles, a fine checker patch)
so ground truth has controllable high-frequency content.  Degradations
are seeded and bitwise reproducible:

* rain: impulse field convolved with an oriented line kernel, screen
  blended.  The streak layer scales linearly with intensity and
  intensity 0 returns the input unchanged.
* raindrop: soft discs alpha-compositing a blurred, slightly magnified
  copy of the scene.

Pairs are degrade-then-downsample; both the clean and degraded branches
go through the same clipped bicubic reduction so a zero-strength
degradation yields exactly the clean pair.

On disk a pair is two raw float tensors plus 8-bit PNG previews, indexed
by a plain-text manifest whose bytes are a pure function of the config.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .kernels import bicubic_resize_np

DEGRADATIONS = ("rain", "raindrop", "rain+raindrop")

TENSOR_MAGIC = b"RSF8"


@dataclass(frozen=True)
class RainParams:
    streak_count: int = 40
    streak_length: int = 9
    angle: float = 15.0  # degrees off vertical
    intensity: float = 0.6
    drop_count: int = 12
    drop_radius: float = 5.0
    drop_alpha: float = 0.6

    def validate(self):
        if self.streak_count < 0 or self.drop_count < 0:
            raise ValueError("counts must be non-negative")
        if self.streak_length < 1:
            raise ValueError(f"streak_length must be >= 1, got {self.streak_length}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        if not 0.0 <= self.drop_alpha <= 1.0:
            raise ValueError(f"drop_alpha must lie in [0, 1], got {self.drop_alpha}")
        if self.drop_radius <= 0.0:
            raise ValueError(f"drop_radius must be positive, got {self.drop_radius}")


@dataclass(frozen=True)
class ImagePair:
    lr_rainy: np.ndarray  # H x W x 3 in [0, 1]
    hr_clean: np.ndarray  # sH x sW x 3 in [0, 1]
    scale: int
    seed: int
    degradation: str


def gen_clean(seed, size):
    """Procedural clean scene: gradient base, rectangles, checker patch."""
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij"
    )
    img = np.empty((size, size, 3))
    for c in range(3):
        gy, gx = rng.uniform(-0.5, 0.5, size=2)
        img[:, :, c] = 0.5 + gy * (yy - 0.5) + gx * (xx - 0.5)

    for _ in range(6):
        h = rng.integers(size // 8, size // 2)
        w = rng.integers(size // 8, size // 2)
        y0 = rng.integers(0, size - h)
        x0 = rng.integers(0, size - w)
        img[y0 : y0 + h, x0 : x0 + w, :] = rng.uniform(0.1, 0.9, size=3)

    # Fine checker over a random patch keeps energy near Nyquist.
    side = int(rng.integers(size // 3, size // 2))
    y0 = int(rng.integers(0, size - side))
    x0 = int(rng.integers(0, size - side))
    checker = ((yy[:side, :side] * 0.0 + np.add.outer(np.arange(side), np.arange(side))) % 2)
    amp = rng.uniform(0.08, 0.15)
    img[y0 : y0 + side, x0 : x0 + side, :] += amp * (checker - 0.5)[:, :, None]

    return np.clip(img, 0.0, 1.0)


def _streak_kernel(length, angle_deg):
    """Bilinearly rasterized line segment, unit sum."""
    a = np.deg2rad(angle_deg)
    dy, dx = np.cos(a), np.sin(a)
    half = (length - 1) / 2.0
    k = length + 2
    kern = np.zeros((k, k))
    center = (k - 1) / 2.0
    for t in np.linspace(-half, half, 4 * length):
        y = center + t * dy
        x = center + t * dx
        iy, ix = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - iy, x - ix
        kern[iy, ix] += (1 - fy) * (1 - fx)
        kern[iy, ix + 1] += (1 - fy) * fx
        kern[iy + 1, ix] += fy * (1 - fx)
        kern[iy + 1, ix + 1] += fy * fx
    return kern / kern.sum()


def _rain_base(shape, params, seed):
    """Normalized streak layer in [0, 1]; independent of intensity."""
    h, w = shape
    rng = np.random.default_rng((seed, 11))
    layer = np.zeros((h, w))
    ys = rng.integers(0, h, size=params.streak_count)
    xs = rng.integers(0, w, size=params.streak_count)
    amps = rng.uniform(0.5, 1.0, size=params.streak_count)
    np.add.at(layer, (ys, xs), amps)
    layer = ndimage.convolve(
        layer, _streak_kernel(params.streak_length, params.angle), mode="constant"
    )
    layer = ndimage.gaussian_filter(layer, 0.4)
    peak = layer.max()
    if peak > 0.0:
        layer /= peak
    return layer


def synth_rain(img, params, seed):
    """Screen-blend motion-blurred streaks onto an image."""
    params.validate()
    img = np.asarray(img, dtype=np.float64)
    if params.intensity == 0.0:
        return img.copy()
    rain = params.intensity * _rain_base(img.shape[:2], params, seed)
    return img + (1.0 - img) * rain[:, :, None]


def synth_raindrop(img, params, seed):
    """Composite soft blurred discs with a slight magnification warp."""
    params.validate()
    img = np.asarray(img, dtype=np.float64)
    if params.drop_count == 0:
        return img.copy()
    h, w = img.shape[:2]
    rng = np.random.default_rng((seed, 13))
    out = img.copy()
    for _ in range(params.drop_count):
        cy = rng.uniform(0, h - 1)
        cx = rng.uniform(0, w - 1)
        r = params.drop_radius * rng.uniform(0.7, 1.3)
        blurred = ndimage.gaussian_filter(
            out, sigma=(max(1.0, 0.35 * r), max(1.0, 0.35 * r), 0.0)
        )
        y0 = max(0, int(np.floor(cy - r - 1)))
        y1 = min(h, int(np.ceil(cy + r + 2)))
        x0 = max(0, int(np.floor(cx - r - 1)))
        x1 = min(w, int(np.ceil(cx + r + 2)))
        yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
        d = np.hypot(yy - cy, xx - cx)
        m = np.clip((r - d) / max(1.0, 0.3 * r), 0.0, 1.0)
        m = m * m * (3.0 - 2.0 * m)  # smoothstep edge
        # Sample the blur at coordinates pulled toward the centre: a mild
        # lens-style magnification inside the drop.
        sy = np.clip(cy + (yy - cy) * 0.82, 0, h - 1)
        sx = np.clip(cx + (xx - cx) * 0.82, 0, w - 1)
        content = np.stack(
            [
                ndimage.map_coordinates(blurred[:, :, c], [sy, sx], order=1)
                for c in range(img.shape[2])
            ],
            axis=2,
        )
        alpha = (params.drop_alpha * m)[:, :, None]
        out[y0:y1, x0:x1] = out[y0:y1, x0:x1] * (1 - alpha) + content * alpha
    return out


def downsample(img, scale):
    """Clipped bicubic reduction by an integer factor; the LR pipeline."""
    return np.clip(bicubic_resize_np(img, 1.0 / scale), 0.0, 1.0)


def degrade(img, degradation, params, seed):
    if degradation == "rain":
        return synth_rain(img, params, seed)
    if degradation == "raindrop":
        return synth_raindrop(img, params, seed)
    if degradation == "rain+raindrop":
        return synth_raindrop(synth_rain(img, params, seed), params, seed)
    raise ValueError(f"unknown degradation {degradation!r}")


def make_pair(seed, scale=2, hr_size=64, degradation="rain", params=RainParams()):
    if hr_size % scale != 0:
        raise ValueError(f"hr_size {hr_size} not divisible by scale {scale}")
    clean = gen_clean(seed, hr_size)
    rainy = np.clip(degrade(clean, degradation, params, seed), 0.0, 1.0)
    return ImagePair(
        lr_rainy=downsample(rainy, scale),
        hr_clean=clean,
        scale=scale,
        seed=seed,
        degradation=degradation,
    )


# --------------------------------------------------------------------------
# on-disk formats


def tensor_to_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def bytes_to_tensor(blob):
    if blob[:4] != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {blob[:4]!r}")
    rank = struct.unpack("<I", blob[4:8])[0]
    shape = struct.unpack(f"<{rank}I", blob[8 : 8 + 4 * rank])
    data = np.frombuffer(blob[8 + 4 * rank :], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValueError("tensor payload size does not match header")
    return data.reshape(shape).astype(np.float64)


def save_tensor(path, arr):
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path):
    return bytes_to_tensor(Path(path).read_bytes())


def save_png(path, img):
    arr = np.round(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB" if arr.ndim == 3 else "L").save(path)


def load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _pair_stem(split, index):
    return f"{split}/pair_{index:05d}"


def write_dataset(out_dir, n_train, n_test, scale=2, hr_size=64,
                  degradations=DEGRADATIONS, params=RainParams(), seed=0):
    """Generate a train/test corpus under out_dir and return manifest text.

    Pair seeds are seed + index (test pairs offset by 100000) and the
    degradation type cycles through `degradations`, so the same call
    always reproduces identical files and manifest bytes.
    """
    out_dir = Path(out_dir)
    lines = ["# split\tstem\tseed\tdegradation\tscale"]
    for split, count, offset in (("train", n_train, 0), ("test", n_test, 100000)):
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        for i in range(count):
            pair_seed = seed + offset + i
            deg = degradations[i % len(degradations)]
            pair = make_pair(pair_seed, scale, hr_size, deg, params)
            stem = _pair_stem(split, i)
            save_tensor(out_dir / f"{stem}.lr.f8", pair.lr_rainy)
            save_tensor(out_dir / f"{stem}.hr.f8", pair.hr_clean)
            save_png(out_dir / f"{stem}.lr.png", pair.lr_rainy)
            save_png(out_dir / f"{stem}.hr.png", pair.hr_clean)
            lines.append(f"{split}\t{stem}\t{pair_seed}\t{deg}\t{scale}")
    manifest = "\n".join(lines) + "\n"
    (out_dir / "manifest.txt").write_text(manifest)
    return manifest


def load_dataset(out_dir, split):
    """Read pairs of one split back from a generated corpus."""
    out_dir = Path(out_dir)
    pairs = []
    for line in (out_dir / "manifest.txt").read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        row_split, stem, pair_seed, deg, scale = line.split("\t")
        if row_split != split:
            continue
        pairs.append(
            ImagePair(
                lr_rainy=load_tensor(out_dir / f"{stem}.lr.f8"),
                hr_clean=load_tensor(out_dir / f"{stem}.hr.f8"),
                scale=int(scale),
                seed=int(pair_seed),
                degradation=deg,
            )
        )
    if not pairs:
        raise ValueError(f"no {split!r} pairs found under {out_dir}")
    return pairs


def load_lr_only(out_dir, split):
    """Degraded LR tensors of a split, without touching ground truth.

    Inference has no business opening *.hr.* files; this loader keeps that
    guarantee auditable.  Returns (stem name, lr image, scale) triples.
    """
    out_dir = Path(out_dir)
    items = []
    for line in (out_dir / "manifest.txt").read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        row_split, stem, _seed, _deg, scale = line.split("\t")
        if row_split != split:
            continue
        items.append(
            (stem.split("/")[-1], load_tensor(out_dir / f"{stem}.lr.f8"), int(scale))
        )
    if not items:
        raise ValueError(f"no {split!r} pairs found under {out_dir}")
    return items


def load_image_folder(folder):
    """PNG files of a directory as (name, float image) pairs, sorted."""
    folder = Path(folder)
    out = [(p.name, load_png(p)) for p in sorted(folder.glob("*.png"))]
    if not out:
        raise ValueError(f"no .png files in {folder}")
    return out
