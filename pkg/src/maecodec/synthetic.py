"""Deterministic procedural images for desk-scale training and evaluation.

No image corpus ships with the package, so tests and demos synthesize
natural-image-like content: smooth 1/f textures, soft color gradients,
and a few hard-edged shapes to give the codec structure worth spending
bits on.
"""

from __future__ import annotations

import numpy as np


def _pink_field(rng, height, width, alpha=1.8):
    """Random field with a 1/f^alpha amplitude spectrum, scaled to [0, 1]."""
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    spectrum = (radius ** (-alpha / 2.0)) * np.exp(2j * np.pi * rng.random((height, width)))
    field = np.fft.ifft2(spectrum).real
    field -= field.min()
    peak = field.max()
    return field / peak if peak > 0 else field


def make_image(seed, height=256, width=256):
    """One synthetic RGB image, float32 (H, W, 3) in [0, 1].

    Mixes smooth structure with broadband texture so that rate genuinely
    buys reconstruction quality; images that are too smooth are nearly
    free to code at every tradeoff and flatten the R-D curve.
    """
    rng = np.random.default_rng([int(seed), height, width, 0x737972])
    img = np.empty((height, width, 3))

    base = _pink_field(rng, height, width)
    grain = _pink_field(rng, height, width, alpha=0.5) - 0.5
    tint = rng.uniform(0.3, 1.0, size=3)
    for ch in range(3):
        detail = _pink_field(rng, height, width, alpha=1.0) - 0.5
        img[..., ch] = 0.55 * tint[ch] * base + 0.30 * detail + 0.25

    yy, xx = np.mgrid[0:height, 0:width]
    gdir = rng.uniform(-1, 1, size=2)
    gradient = (gdir[0] * yy / height + gdir[1] * xx / width) * 0.15
    img += gradient[..., None]

    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.1, 0.9, size=2) * (height, width)
        r = rng.uniform(0.05, 0.2) * min(height, width)
        color = rng.uniform(0, 1, size=3)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[mask] = 0.3 * img[mask] + 0.7 * color

    img += 0.12 * grain[..., None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_corpus(num_images, height=256, width=256, seed_base=0):
    """A list of distinct synthetic images with consecutive seeds."""
    return [make_image(seed_base + i, height, width) for i in range(num_images)]
