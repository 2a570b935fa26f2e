"""Axis-aligned box geometry: IoU, delta coding, clipping, and NMS.

Boxes are continuous ``(x_min, y_min, x_max, y_max)`` pixel coordinates with
``area = (x_max - x_min) * (y_max - y_min)``. All functions accept arrays of
shape ``(N, 4)`` (or a single ``(4,)`` box where noted) and operate in float64.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

# Decoded boxes are never allowed to collapse below one pixel per side.
MIN_BOX_SIZE = 1.0


def box_area(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two single boxes. Degenerate (zero-area) boxes score 0."""
    m = iou_matrix(np.asarray(a, dtype=np.float64).reshape(1, 4),
                   np.asarray(b, dtype=np.float64).reshape(1, 4))
    return float(m[0, 0])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` box sets -> ``(N, M)``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = box_area(a)[:, None]
    area_b = box_area(b)[None, :]
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a + area_b - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0.0, inter / union, 0.0)
    return out


def encode_boxes(boxes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Encode boxes relative to anchors as ``(t_x, t_y, t_w, t_h)``.

    ``t_x = (x - x_a) / w_a``, ``t_y = (y - y_a) / h_a`` on centers,
    ``t_w = log(w / w_a)``, ``t_h = log(h / h_a)`` on sizes.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    x = boxes[:, 0] + 0.5 * w
    y = boxes[:, 1] + 0.5 * h
    return np.stack(
        [(x - ax) / aw, (y - ay) / ah, np.log(w / aw), np.log(h / ah)], axis=1
    )


def decode_boxes(
    deltas: np.ndarray,
    anchors: np.ndarray,
    image_size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Invert :func:`encode_boxes`; optionally clip to ``(height, width)``.

    After clipping, boxes thinner than one pixel are widened to
    ``MIN_BOX_SIZE`` about their center (a clamp event, logged).
    """
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    x = deltas[:, 0] * aw + ax
    y = deltas[:, 1] * ah + ay
    w = np.exp(deltas[:, 2]) * aw
    h = np.exp(deltas[:, 3]) * ah
    boxes = np.stack(
        [x - 0.5 * w, y - 0.5 * h, x + 0.5 * w, y + 0.5 * h], axis=1
    )
    if image_size is not None:
        boxes = clip_boxes(boxes, image_size)
        boxes = _clamp_min_size(boxes, image_size)
    return boxes


def clip_boxes(boxes: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    height, width = image_size
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, float(width))
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, float(height))
    return boxes


def _clamp_min_size(boxes: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    height, width = image_size
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    thin = (w < MIN_BOX_SIZE) | (h < MIN_BOX_SIZE)
    if not thin.any():
        return boxes
    logger.debug("clamped %d decoded boxes to minimum size", int(thin.sum()))
    boxes = boxes.copy()
    cx = np.clip(0.5 * (boxes[:, 0] + boxes[:, 2]),
                 0.5 * MIN_BOX_SIZE, width - 0.5 * MIN_BOX_SIZE)
    cy = np.clip(0.5 * (boxes[:, 1] + boxes[:, 3]),
                 0.5 * MIN_BOX_SIZE, height - 0.5 * MIN_BOX_SIZE)
    nw = np.maximum(w, MIN_BOX_SIZE)
    nh = np.maximum(h, MIN_BOX_SIZE)
    boxes[thin, 0] = (cx - 0.5 * nw)[thin]
    boxes[thin, 1] = (cy - 0.5 * nh)[thin]
    boxes[thin, 2] = (cx + 0.5 * nw)[thin]
    boxes[thin, 3] = (cy + 0.5 * nh)[thin]
    return clip_boxes(boxes, image_size)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy highest-score-first NMS; returns kept indices, score-descending.

    Score ties are broken by input order (stable).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    while order.size > 0:
        i = int(order[0])
        keep.append(i)
        if order.size == 1:
            break
        rest = order[1:]
        ious = iou_matrix(boxes[i], boxes[rest])[0]
        order = rest[ious <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)
