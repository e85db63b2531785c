"""Orthonormal 2-D DCT helpers and the JPEG luminance quantizer."""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

# Standard JPEG luminance quantization table (Annex K of the JPEG spec).
JPEG_LUMA_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def dct2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the full array."""
    return dctn(x, type=2, norm="ortho")


def idct2(y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal DCT-III)."""
    return idctn(y, type=2, norm="ortho")


def scaled_quant_table(quality: float) -> np.ndarray:
    """JPEG luminance table at the given quality, libjpeg scaling rule.

    quality < 50 uses scale = 5000/q, otherwise 200 - 2q; entries are
    floored into [1, 255], so quality 100 yields an all-ones table.
    """
    if not (1 <= quality <= 100):
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((JPEG_LUMA_QTABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1, 255)


def jpeg_degrade_block(block: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Quantize one unit-interval block through the JPEG coefficient grid.

    The block is lifted to the 0..255 range, level-shifted, transformed,
    snapped to multiples of the quantizer entries, and brought back.  Edge
    blocks smaller than 8x8 use the matching top-left corner of the table.
    """
    h, w = block.shape
    coeffs = dct2(block * 255.0 - 128.0)
    q = qtable[:h, :w]
    coeffs = np.round(coeffs / q) * q
    restored = (idct2(coeffs) + 128.0) / 255.0
    return np.clip(restored, 0.0, 1.0)
