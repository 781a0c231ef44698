"""Weak and strong stochastic augmentation of ``[N, C, H, W]`` batches in [0, 1].

Each pipeline is split into a sampling step (draw per-image parameters from a
stream) and a deterministic apply step, so tests can force specific draws.

Strong policy, applied in order: horizontal flip, square resized crop,
3x3 Gaussian blur, contrast jitter, random erasing, center-fixed random affine.
Choices the policy definition leaves open are listed in
``docs/augmentation.md``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernels
from .errors import ConfigError

_GRAY = np.array([0.299, 0.587, 0.114])


def _pair(v) -> tuple[float, float]:
    a, b = (float(x) for x in v)
    return a, b


@dataclass(frozen=True)
class WeakPolicy:
    pad: int = 4
    flip_p: float = 0.5
    kind: str = "weak"

    def __post_init__(self):
        if self.pad < 0:
            raise ConfigError("weak pad must be >= 0")
        _check_prob("flip_p", self.flip_p)


@dataclass(frozen=True)
class StrongPolicy:
    flip_p: float = 0.5
    crop_scale: tuple[float, float] = (0.8, 1.0)
    crop_ratio: tuple[float, float] = (1.0, 1.0)
    blur_p: float = 0.5
    blur_sigma: float = 1.5
    contrast: tuple[float, float] = (0.75, 1.5)
    erase_p: float = 0.1
    erase_scale: tuple[float, float] = (0.02, 0.33)
    erase_ratio: tuple[float, float] = (0.3, 3.3)
    affine_p: float = 0.5
    degrees: tuple[float, float] = (-25.0, 25.0)
    translate: tuple[float, float] = (0.2, 0.2)
    scale: tuple[float, float] = (0.8, 1.2)
    shear: tuple[float, float] = (-8.0, 8.0)
    kind: str = "strong_fixed"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple)):
                v = _pair(v)
                object.__setattr__(self, f.name, v)
                if f.name != "translate" and v[0] > v[1]:
                    raise ConfigError(f"{f.name} range must be ordered, got {v}")
        for name in ("flip_p", "blur_p", "erase_p", "affine_p"):
            _check_prob(name, getattr(self, name))
        if self.crop_scale[0] <= 0 or self.crop_scale[1] > 1:
            raise ConfigError(f"crop_scale must lie in (0, 1], got {self.crop_scale}")
        if self.blur_sigma <= 0:
            raise ConfigError("blur_sigma must be positive")

    @classmethod
    def identity(cls) -> "StrongPolicy":
        return cls(
            flip_p=0.0,
            crop_scale=(1.0, 1.0),
            blur_p=0.0,
            contrast=(1.0, 1.0),
            erase_p=0.0,
            affine_p=0.0,
            degrees=(0.0, 0.0),
            translate=(0.0, 0.0),
            scale=(1.0, 1.0),
            shear=(0.0, 0.0),
        )


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {p}")


def policy_from_dict(d: dict):
    kind = d.get("kind")
    cls = {"weak": WeakPolicy, "strong_fixed": StrongPolicy}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown augmentation kind {kind!r}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {kind} augmentation keys: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def policy_to_dict(policy) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(policy).items()}


def _check_batch(batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4:
        raise ValueError(f"expected an N×C×H×W batch, got shape {batch.shape}")
    if min(batch.shape[2:]) < 8:
        raise ValueError(f"augmentation needs H, W >= 8, got {batch.shape[2:]}")
    return batch


# ---------------------------------------------------------------- weak


@dataclass
class WeakParams:
    dy: np.ndarray  # crop offset relative to the unshifted position
    dx: np.ndarray
    flip: np.ndarray


def sample_weak(n: int, rng: np.random.Generator, policy: WeakPolicy = WeakPolicy()) -> WeakParams:
    dy = rng.integers(-policy.pad, policy.pad + 1, size=n)
    dx = rng.integers(-policy.pad, policy.pad + 1, size=n)
    flip = rng.random(n) < policy.flip_p
    return WeakParams(dy, dx, flip)


def apply_weak(batch: np.ndarray, params: WeakParams, pad: int = 4) -> np.ndarray:
    n, c, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect") if pad else batch
    out = np.empty_like(batch)
    for i in range(n):
        r0, c0 = pad + int(params.dy[i]), pad + int(params.dx[i])
        crop = padded[i, :, r0 : r0 + h, c0 : c0 + w]
        out[i] = crop[:, :, ::-1] if params.flip[i] else crop
    return out


def weak_augment(batch: np.ndarray, rng: np.random.Generator, policy: WeakPolicy = WeakPolicy()) -> np.ndarray:
    """Reflect-pad, random crop back to size, random horizontal flip."""
    batch = _check_batch(batch)
    if policy.pad > min(batch.shape[2:]) - 1:
        raise ConfigError("reflect pad must be smaller than the image side")
    return apply_weak(batch, sample_weak(len(batch), rng, policy), policy.pad)


# ---------------------------------------------------------------- strong


@dataclass
class StrongParams:
    flip: np.ndarray
    crop: np.ndarray  # [N, 4]: y0, x0, height, width in source pixels
    blur: np.ndarray
    contrast: np.ndarray
    erase: np.ndarray  # [N, 5]: on, y0, x0, height, width
    affine: np.ndarray  # [N, 6]: on, angle_deg, tx_px, ty_px, scale, shear_deg


def sample_strong(
    n: int, h: int, w: int, rng: np.random.Generator, policy: StrongPolicy = StrongPolicy()
) -> StrongParams:
    flip = rng.random(n) < policy.flip_p

    area = rng.uniform(*policy.crop_scale, size=n) * h * w
    logr = np.log(policy.crop_ratio)
    ratio = np.exp(rng.uniform(logr[0], logr[1], size=n))
    cw = np.minimum(np.sqrt(area * ratio), w)
    ch = np.minimum(np.sqrt(area / ratio), h)
    cy = rng.random(n) * (h - ch)
    cx = rng.random(n) * (w - cw)
    crop = np.stack([cy, cx, ch, cw], axis=1)

    blur = rng.random(n) < policy.blur_p
    contrast = rng.uniform(*policy.contrast, size=n)

    erase = np.zeros((n, 5))
    erase_on = rng.random(n) < policy.erase_p
    e_area = rng.uniform(*policy.erase_scale, size=n) * h * w
    le = np.log(policy.erase_ratio)
    e_ratio = np.exp(rng.uniform(le[0], le[1], size=n))
    eh = np.clip(np.round(np.sqrt(e_area * e_ratio)), 1, h).astype(np.int64)
    ew = np.clip(np.round(np.sqrt(e_area / e_ratio)), 1, w).astype(np.int64)
    ey = np.floor(rng.random(n) * (h - eh + 1)).astype(np.int64)
    ex = np.floor(rng.random(n) * (w - ew + 1)).astype(np.int64)
    erase[:, 0] = erase_on
    erase[:, 1:] = np.stack([ey, ex, eh, ew], axis=1)

    affine = np.zeros((n, 6))
    affine[:, 0] = rng.random(n) < policy.affine_p
    affine[:, 1] = rng.uniform(*policy.degrees, size=n)
    affine[:, 2] = rng.uniform(-policy.translate[0], policy.translate[0], size=n) * w
    affine[:, 3] = rng.uniform(-policy.translate[1], policy.translate[1], size=n) * h
    affine[:, 4] = rng.uniform(*policy.scale, size=n)
    affine[:, 5] = rng.uniform(*policy.shear, size=n)
    return StrongParams(flip, crop, blur, contrast, erase, affine)


def gaussian_kernel3(sigma: float) -> np.ndarray:
    g = np.exp(-(np.arange(-1, 2) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _crop_mats(crop: np.ndarray, h: int, w: int) -> np.ndarray:
    """Output pixel -> source pixel maps for resizing each crop box back to h×w."""
    y0, x0, ch, cw = crop.T
    mats = np.zeros((len(crop), 2, 3))
    sx, sy = cw / w, ch / h
    mats[:, 0, 0] = sx
    mats[:, 0, 2] = x0 + 0.5 * sx - 0.5
    mats[:, 1, 1] = sy
    mats[:, 1, 2] = y0 + 0.5 * sy - 0.5
    return mats


def _affine_mats(aff: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse (output -> source) of rotate/scale/shear about the centre, then translate."""
    n = len(aff)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ang = np.deg2rad(aff[:, 1])
    sh = np.tan(np.deg2rad(aff[:, 5]))
    s = aff[:, 4]
    cos, sin = np.cos(ang), np.sin(ang)
    fwd = np.zeros((n, 3, 3))
    # R(angle) * scale * [[1, shear], [0, 1]]
    fwd[:, 0, 0] = s * cos
    fwd[:, 0, 1] = s * (cos * sh - sin)
    fwd[:, 1, 0] = s * sin
    fwd[:, 1, 1] = s * (sin * sh + cos)
    fwd[:, 0, 2] = cx + aff[:, 2] - fwd[:, 0, 0] * cx - fwd[:, 0, 1] * cy
    fwd[:, 1, 2] = cy + aff[:, 3] - fwd[:, 1, 0] * cx - fwd[:, 1, 1] * cy
    fwd[:, 2, 2] = 1.0
    return np.linalg.inv(fwd)[:, :2, :]


def adjust_contrast(batch: np.ndarray, factor: np.ndarray) -> np.ndarray:
    """Blend each image with its mean grey level: ``f*x + (1-f)*mean``."""
    if batch.shape[1] == 3:
        gray = np.tensordot(_GRAY, batch, axes=([0], [1]))
    else:
        gray = batch.mean(axis=1)
    mean = gray.reshape(len(batch), -1).mean(axis=1)
    f = factor[:, None, None, None]
    return f * batch + (1.0 - f) * mean[:, None, None, None]


def apply_strong(batch: np.ndarray, p: StrongParams, policy: StrongPolicy = StrongPolicy()) -> np.ndarray:
    n, c, h, w = batch.shape
    x = np.where(p.flip[:, None, None, None], batch[:, :, :, ::-1], batch)

    x = np.clip(kernels.warp_bilinear(x, _crop_mats(p.crop, h, w), border=True), 0.0, 1.0)

    if p.blur.any():
        blurred = kernels.filter3x3_reflect(x, gaussian_kernel3(policy.blur_sigma))
        x = np.where(p.blur[:, None, None, None], blurred, x)

    x = np.clip(adjust_contrast(x, p.contrast), 0.0, 1.0)

    for i in np.flatnonzero(p.erase[:, 0]):
        y0, x0, eh, ew = (int(v) for v in p.erase[i, 1:])
        x[i, :, y0 : y0 + eh, x0 : x0 + ew] = 0.0

    on = p.affine[:, 0] > 0
    if on.any():
        warped = kernels.warp_bilinear(x[on], _affine_mats(p.affine[on], h, w), border=False)
        x[on] = warped
    return np.clip(x, 0.0, 1.0)


def strong_augment(
    batch: np.ndarray, rng: np.random.Generator, policy: StrongPolicy = StrongPolicy()
) -> np.ndarray:
    batch = _check_batch(batch)
    n, _, h, w = batch.shape
    return apply_strong(batch, sample_strong(n, h, w, rng, policy), policy)


def augment(batch, rng, policy) -> np.ndarray:
    if isinstance(policy, WeakPolicy):
        return weak_augment(batch, rng, policy)
    if isinstance(policy, StrongPolicy):
        return strong_augment(batch, rng, policy)
    raise ConfigError(f"unknown policy {policy!r}")


__all__ = [
    "StrongParams",
    "StrongPolicy",
    "WeakParams",
    "WeakPolicy",
    "adjust_contrast",
    "apply_strong",
    "apply_weak",
    "augment",
    "gaussian_kernel3",
    "policy_from_dict",
    "policy_to_dict",
    "sample_strong",
    "sample_weak",
    "strong_augment",
    "weak_augment",
]
