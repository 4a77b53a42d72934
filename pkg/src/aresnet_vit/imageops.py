"""Plain-numpy raster resampling shared by the data pipeline, mask gating,
and heatmap export.  Nothing here touches the autodiff tape."""

from __future__ import annotations

import numpy as np


def _overlap_weights(src: int, dst: int) -> np.ndarray:
    """Row-stochastic [dst, src] matrix of area overlaps between source and
    destination pixel intervals.  Each row sums to exactly 1.0 (the largest
    weight absorbs the rounding residue), so constant fields of 0 or 1 are
    preserved bitwise."""
    m = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        a, b = i * scale, (i + 1) * scale
        j0 = int(np.floor(a))
        j1 = min(int(np.ceil(b)), src)
        for j in range(j0, j1):
            m[i, j] = max(0.0, min(b, j + 1.0) - max(a, float(j)))
    m /= m.sum(axis=1, keepdims=True)
    for i in range(dst):
        j = int(np.argmax(m[i]))
        m[i, j] += 1.0 - m[i].sum()
    return m


def area_resize(values: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Area-average resample of a 2-d raster; values stay inside the input's
    range (each output pixel is a convex combination of inputs)."""
    h, w = values.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return values.copy()
    rows = _overlap_weights(h, oh)
    cols = _overlap_weights(w, ow)
    return rows @ values @ cols.T


def bilinear_resize(img: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Bilinear resample of a 2-d raster using half-pixel centers with edge
    clamping."""
    h, w = img.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return img.copy()
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def hflip(raster: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(raster[:, ::-1])


def rot90(raster: np.ndarray, quarter_turns: int = 1) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(raster, k=quarter_turns))
