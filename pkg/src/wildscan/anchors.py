"""Anchor grid generation for the region proposal network."""

from __future__ import annotations

import numpy as np


def anchor_templates(scales, ratios) -> np.ndarray:
    """Zero-centered anchors, one per (scale, ratio) pair, ratio-major order.

    An anchor of scale ``s`` and ratio ``r = h/w`` has area ``s**2``,
    so ``w = s / sqrt(r)`` and ``h = s * sqrt(r)``.
    """
    scales = np.asarray(scales, dtype=np.float64)
    ratios = np.asarray(ratios, dtype=np.float64)
    ws = (scales[None, :] / np.sqrt(ratios)[:, None]).reshape(-1)
    hs = (scales[None, :] * np.sqrt(ratios)[:, None]).reshape(-1)
    return np.stack([-0.5 * ws, -0.5 * hs, 0.5 * ws, 0.5 * hs], axis=1)


def generate_anchors(config, feature_shape: tuple[int, int]) -> np.ndarray:
    """All anchors for an ``(h, w)`` feature map, as ``(h*w*A, 4)`` pixels.

    Anchors are centered on feature-cell centers: cell ``(i, j)`` maps to
    image point ``((j + 0.5) * stride, (i + 0.5) * stride)``. Row-major over
    cells, the per-cell template order within each cell.
    """
    h, w = feature_shape
    if h < 1 or w < 1:
        raise ValueError(f"feature map must be at least 1x1, got {h}x{w}")
    stride = float(config.feature_stride)
    templates = anchor_templates(config.anchor_scales, config.anchor_ratios)
    cx = (np.arange(w, dtype=np.float64) + 0.5) * stride
    cy = (np.arange(h, dtype=np.float64) + 0.5) * stride
    shift_x, shift_y = np.meshgrid(cx, cy)
    shifts = np.stack(
        [shift_x.ravel(), shift_y.ravel(), shift_x.ravel(), shift_y.ravel()],
        axis=1,
    )
    anchors = shifts[:, None, :] + templates[None, :, :]
    return anchors.reshape(-1, 4)
