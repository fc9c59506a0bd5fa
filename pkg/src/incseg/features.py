"""Fixed per-pixel feature extraction.

Images are (h, w, 3) float64 arrays with values in [0, 1]. Each pixel is
described by 8 numbers: the 3 channel values at the pixel, the
normalized coordinates (i/h, j/w), and the per-channel mean over the
5x5 window centered on the pixel. Windows are clamped at the image
borders, i.e. the mean runs over however many of the 25 neighbors fall
inside the image. The extractor has no parameters and never changes
during a run.
"""

import numpy as np

from .errors import ContractViolation

FEATURE_DIM = 8
WINDOW_RADIUS = 2


def _check_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractViolation(f"expected (h, w, 3) image, got shape {image.shape}")
    return image


def extract_features(image, i: int, j: int) -> np.ndarray:
    """Feature vector of pixel (i, j): [r, g, b, i/h, j/w, window means]."""
    image = _check_image(image)
    h, w, _ = image.shape
    if not (0 <= i < h and 0 <= j < w):
        raise ContractViolation(f"pixel ({i}, {j}) outside {h}x{w} image")
    r = WINDOW_RADIUS
    lo_i, hi_i = max(0, i - r), min(h - 1, i + r)
    lo_j, hi_j = max(0, j - r), min(w - 1, j + r)
    acc = np.zeros(3)
    count = 0
    for wi in range(lo_i, hi_i + 1):
        for wj in range(lo_j, hi_j + 1):
            acc += image[wi, wj]
            count += 1
    out = np.empty(FEATURE_DIM)
    out[0:3] = image[i, j]
    out[3] = i / h
    out[4] = j / w
    out[5:8] = acc / count
    return out


def feature_map(image) -> np.ndarray:
    """All pixels' feature vectors at once, shape (h, w, 8).

    Window sums accumulate shifted copies in the same (di, dj) row-major
    order as the scalar path, so the two agree bit for bit.
    """
    image = _check_image(image)
    h, w, _ = image.shape
    r = WINDOW_RADIUS
    sums = np.zeros((h, w, 3))
    counts = np.zeros((h, w, 1))
    for di in range(-r, r + 1):
        si_lo, si_hi = max(0, -di), min(h, h - di)
        for dj in range(-r, r + 1):
            sj_lo, sj_hi = max(0, -dj), min(w, w - dj)
            sums[si_lo:si_hi, sj_lo:sj_hi] += image[
                si_lo + di : si_hi + di, sj_lo + dj : sj_hi + dj
            ]
            counts[si_lo:si_hi, sj_lo:sj_hi, 0] += 1.0
    out = np.empty((h, w, FEATURE_DIM))
    out[:, :, 0:3] = image
    out[:, :, 3] = (np.arange(h) / h)[:, None]
    out[:, :, 4] = (np.arange(w) / w)[None, :]
    out[:, :, 5:8] = sums / counts
    return out
