"""Exact image rotations, a Harris detector and an Upright-SIFT-style descriptor.

Everything here commutes bit-exactly with quarter-turn rotations:

* the detector works on 8-bit levels in integer arithmetic,
* orientation bins are found by rotating each gradient into a canonical
  quadrant with sign flips and swaps, never through ``atan2``,
* histogram and norm sums add their terms in sorted order.

Images are ``(H, W)`` float arrays in [0, 1]. Keypoints are ``(2, N)`` arrays
in centered coordinates: origin at ``((W-1)/2, (H-1)/2)``, x to the right and
y upward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .group_reps import PlanarRotation, Steerer

PATCH = 16
GRID = 4
BINS = 8
DIM = GRID * GRID * BINS
BORDER = 8  # keypoints closer than this to the image border have no full patch

# sample offsets: nearest pixels to a 16x16 grid centred on the keypoint pixel,
# i.e. +-1..+-8 (ties at half-pixel rounded away from the centre)
_OFFSETS = np.concatenate([np.arange(-8, 0), np.arange(1, 9)])
_TAN_22_5 = math.tan(math.pi / 8)
_BINOMIAL5 = np.array([1, 4, 6, 4, 1], dtype=np.int64)


@dataclass(frozen=True)
class DescriptorMatrix:
    """``(D, N)`` descriptions with a per-column degenerate flag."""

    data: np.ndarray
    degenerate: np.ndarray
    normalized: bool = True

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def shape(self):
        return self.data.shape


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image has non-finite pixels")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def pixel_to_centered(rows, cols, shape) -> np.ndarray:
    h, w = shape
    return np.vstack([np.asarray(cols, float) - (w - 1) / 2, (h - 1) / 2 - np.asarray(rows, float)])


def centered_to_pixel(kps, shape) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (row, col) positions of centered keypoints."""
    h, w = shape
    kps = np.asarray(kps, dtype=np.float64).reshape(2, -1)
    return (h - 1) / 2 - kps[1], kps[0] + (w - 1) / 2


def rotate_image_quarter(img, k: int) -> np.ndarray:
    """Rotate anticlockwise by ``k`` quarter turns (a pixel permutation)."""
    img = check_image(img)
    k = int(k) % 4
    if k % 2 and img.shape[0] != img.shape[1]:
        raise ValueError("odd quarter turns need a square image")
    return np.ascontiguousarray(np.rot90(img, k))


def rotate_image_continuous(img, angle: float) -> np.ndarray:
    """Rotate anticlockwise about the centre with bilinear sampling; outside is 0."""
    img = check_image(img)
    h, w = img.shape
    if h != w:
        raise ValueError("continuous rotation needs a square image")
    rot = PlanarRotation(angle).matrix
    rows, cols = np.mgrid[0:h, 0:w]
    out_xy = pixel_to_centered(rows.ravel(), cols.ravel(), img.shape)
    src_r, src_c = centered_to_pixel(rot.T @ out_xy, img.shape)
    eps = 1e-9
    inside = (src_r >= -eps) & (src_r <= h - 1 + eps) & (src_c >= -eps) & (src_c <= w - 1 + eps)
    src_r = np.clip(src_r, 0, h - 1)
    src_c = np.clip(src_c, 0, w - 1)
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr = src_r - r0
    fc = src_c - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    val = ((1 - fr) * ((1 - fc) * img[r0, c0] + fc * img[r0, c1])
           + fr * ((1 - fc) * img[r1, c0] + fc * img[r1, c1]))
    return np.where(inside, val, 0.0).reshape(h, w)


def rotate_keypoints(kps, rot: PlanarRotation | float) -> np.ndarray:
    if not isinstance(rot, PlanarRotation):
        rot = PlanarRotation(rot)
    return rot.matrix @ np.asarray(kps, dtype=np.float64).reshape(2, -1)


def _int_levels(img) -> np.ndarray:
    return np.rint(check_image(img) * 255.0).astype(np.int64)


def _smooth_int(a: np.ndarray) -> np.ndarray:
    """Separable 5x5 binomial window sum with zero padding, in exact integers."""
    p = np.pad(a, 2)
    h, w = a.shape
    tmp = sum(wt * p[:, i:i + w] for i, wt in enumerate(_BINOMIAL5))
    return sum(wt * tmp[i:i + h, :] for i, wt in enumerate(_BINOMIAL5))


def harris_response(img) -> np.ndarray:
    """Integer Harris response 25*det(M) - trace(M)^2 (k = 0.04) on 8-bit levels."""
    lv = np.pad(_int_levels(img), 1, mode="edge")
    gx = lv[1:-1, 2:] - lv[1:-1, :-2]
    gy = lv[:-2, 1:-1] - lv[2:, 1:-1]
    sxx = _smooth_int(gx * gx)
    syy = _smooth_int(gy * gy)
    sxy = _smooth_int(gx * gy)
    return 25 * (sxx * syy - sxy * sxy) - (sxx + syy) ** 2


def detect_keypoints(img, max_n: int, *, radius: float | None = None) -> np.ndarray:
    """Harris corners after 5x5 non-maximum suppression, strongest first.

    Points closer than 8 px to the border (or farther than ``radius`` from the
    centre, when given) are discarded. Order is by (response, row, column)
    descending; if the cut at ``max_n`` falls inside a run of equal responses,
    that whole run is dropped so the result stays rotation covariant.
    """
    img = check_image(img)
    h, w = img.shape
    if h < 16 or w < 16:
        raise ValueError("detector needs an image of at least 16x16")
    resp = harris_response(img)
    peak = ndimage.maximum_filter(resp, size=5, mode="constant", cval=np.iinfo(np.int64).min)
    keep = (resp == peak) & (resp > 0)
    keep[:BORDER, :] = keep[-BORDER:, :] = False
    keep[:, :BORDER] = keep[:, -BORDER:] = False
    rows, cols = np.nonzero(keep)
    if radius is not None:
        xy = pixel_to_centered(rows, cols, img.shape)
        inside = xy[0] ** 2 + xy[1] ** 2 <= radius**2
        rows, cols = rows[inside], cols[inside]
    vals = resp[rows, cols]
    order = np.lexsort((-cols, -rows, -vals))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(vals) > max_n:
        cut = vals[max_n]
        n = max_n
        while n > 0 and vals[n - 1] == cut:
            n -= 1
        rows, cols = rows[:n], cols[:n]
    return pixel_to_centered(rows, cols, img.shape)


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(img, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2
    gy = (p[:-2, 1:-1] - p[2:, 1:-1]) / 2
    return gx, gy


def orientation_bins(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """8 bins of 45 degrees, bin 0 covering [-22.5, 22.5) degrees.

    Each vector is turned by the quarter turn q that lands it in the cone
    ``x > 0, -x <= y < x``; the bin is 2q plus the sub-bin inside that cone.
    """
    cands = ((gx, gy), (gy, -gx), (-gx, -gy), (-gy, gx))
    q = np.zeros(gx.shape, dtype=np.int64)
    u = np.zeros_like(gx)
    v = np.zeros_like(gy)
    for k, (a, b) in enumerate(cands):
        hit = (a > 0) & (b >= -a) & (b < a)
        q[hit] = k
        u[hit] = a[hit]
        v[hit] = b[hit]
    sub = np.where(v < -_TAN_22_5 * u, -1, np.where(v >= _TAN_22_5 * u, 1, 0))
    return (2 * q + sub) % BINS


def _ordered_sum(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis in ascending order, so permuted inputs give identical bits."""
    x = np.sort(x, axis=-1)
    acc = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        acc += x[..., i]
    return acc


def _patch_pixels(kps, shape) -> tuple[np.ndarray, np.ndarray]:
    r, c = centered_to_pixel(kps, shape)
    r0 = np.rint(r).astype(np.int64)
    c0 = np.rint(c).astype(np.int64)
    h, w = shape
    bad = (r0 < BORDER) | (r0 > h - 1 - BORDER) | (c0 < BORDER) | (c0 > w - 1 - BORDER)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"keypoint {i} at pixel ({r0[i]}, {c0[i]}) is closer than "
                         f"{BORDER} px to the border")
    # patch row 0 is the top (dy = +8), patch column 0 the left (dx = -8)
    dy = _OFFSETS[::-1]
    dx = _OFFSETS
    rows = r0[:, None, None] - dy[None, :, None]
    cols = c0[:, None, None] + dx[None, None, :]
    return np.broadcast_arrays(rows, cols)


def describe(img, kps) -> DescriptorMatrix:
    """128-dimensional upright gradient-histogram descriptions, one column per keypoint.

    Each keypoint gets a 16x16 patch split into a 4x4 grid of 4x4 cells,
    numbered row-major from the top-left; each cell holds an 8-bin
    orientation histogram weighted by gradient magnitude, with hard binning.
    Columns are unit norm; an all-zero column is replaced by the uniform unit
    vector and flagged in ``degenerate``.
    """
    img = check_image(img)
    kps = np.asarray(kps, dtype=np.float64).reshape(2, -1)
    n = kps.shape[1]
    if n == 0:
        return DescriptorMatrix(np.zeros((DIM, 0)), np.zeros(0, dtype=bool))
    rows, cols = _patch_pixels(kps, img.shape)
    gx, gy = _gradients(img)
    px, py = gx[rows, cols], gy[rows, cols]  # (N, 16, 16)
    mag = np.sqrt(px * px + py * py)
    bins = orientation_bins(px, py)
    # (N, 16, 16) -> (N, cell, sample) with cells row-major over the 4x4 grid
    cell_mag = mag.reshape(n, GRID, 4, GRID, 4).transpose(0, 1, 3, 2, 4).reshape(n, GRID * GRID, 16)
    cell_bin = bins.reshape(n, GRID, 4, GRID, 4).transpose(0, 1, 3, 2, 4).reshape(n, GRID * GRID, 16)
    votes = np.where(cell_bin[:, :, None, :] == np.arange(BINS)[None, None, :, None],
                     cell_mag[:, :, None, :], 0.0)
    hist = _ordered_sum(votes).reshape(n, DIM)
    norm = np.sqrt(_ordered_sum(hist * hist))
    degenerate = norm == 0.0
    safe = np.where(degenerate, 1.0, norm)
    out = hist / safe[:, None]
    out[degenerate] = 1.0 / math.sqrt(DIM)
    return DescriptorMatrix(np.ascontiguousarray(out.T), degenerate)


def raw_histogram_mass(img, kps) -> np.ndarray:
    """Total unnormalized gradient magnitude in each keypoint's patch."""
    rows, cols = _patch_pixels(np.asarray(kps, float).reshape(2, -1), check_image(img).shape)
    gx, gy = _gradients(np.asarray(img, float))
    px, py = gx[rows, cols], gy[rows, cols]
    mag = np.sqrt(px * px + py * py)
    return _ordered_sum(mag.reshape(mag.shape[0], -1))


def upsift_permutation() -> np.ndarray:
    """Index map ``new[perm[i]] = old[i]`` for a 90 degree anticlockwise turn."""
    perm = np.empty(DIM, dtype=np.int64)
    for i in range(GRID):
        for j in range(GRID):
            for b in range(BINS):
                old = (i * GRID + j) * BINS + b
                # cell (i, j) moves to (3 - j, i); gradients turn by two bins
                perm[old] = ((GRID - 1 - j) * GRID + i) * BINS + (b + 2) % BINS
    return perm


def upsift_steerer() -> Steerer:
    """The exact 128x128 permutation steerer of the descriptor under quarter turns."""
    P = np.zeros((DIM, DIM))
    P[upsift_permutation(), np.arange(DIM)] = 1.0
    return Steerer(P, 4)
