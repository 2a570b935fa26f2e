"""Training objective: classification losses, box regression loss, and
anchor/proposal target assignment.

Classification comes in two flavors selected by :class:`LossConfig`:
plain cross-entropy over a softmax distribution (background included as a
class), or asymmetric focal loss over per-class logistic outputs where
background is the all-zeros target vector.

The scalar loss functions accept and return torch tensors so gradients can
flow; values are exact in the dtype given (tests use float64).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import boxes as box_ops

EPS = 1e-12

# weight-mask codes for TrainingTargets
POSITIVE = 1
NEGATIVE = 0
IGNORE = -1


@dataclass
class LossConfig:
    classification_kind: str = "cross_entropy"  # or "asymmetric_focal"
    gamma_pos: float = 1.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    regression_weight: float = 1.0
    smooth_l1_beta: float = 1.0 / 9.0

    def __post_init__(self):
        if self.classification_kind not in ("cross_entropy", "asymmetric_focal"):
            raise ValueError(
                f"unknown classification_kind {self.classification_kind!r}"
            )
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("gamma_pos and gamma_neg must be >= 0")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must be in [0, 1)")
        if self.regression_weight <= 0:
            raise ValueError("regression_weight must be > 0")
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be > 0")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def cross_entropy_loss(class_scores, target: int) -> torch.Tensor:
    """-log p_target for a probability vector; p clamped at EPS."""
    p = _as_tensor(class_scores)
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"class_scores must sum to 1, got {total}")
    return -torch.log(torch.clamp(p[int(target)], min=EPS))


def asymmetric_focal_loss(
    class_probabilities, targets, config: LossConfig
) -> torch.Tensor:
    """Summed per-class asymmetric focal terms for one sample.

    Positive class c: -(1 - p_c)^gamma_pos * log(p_c).
    Negative class c: with p_m = max(p_c - margin, 0),
    -(p_m)^gamma_neg * log(1 - p_m). Easy negatives (p <= margin) cost 0.
    """
    p = _as_tensor(class_probabilities)
    y = _as_tensor(targets).to(p.dtype)
    p = torch.clamp(p, min=0.0, max=1.0)
    pos = -torch.pow(1.0 - p, config.gamma_pos) * torch.log(
        torch.clamp(p, min=EPS)
    )
    p_m = torch.clamp(p - config.margin, min=0.0)
    neg = -torch.pow(p_m, config.gamma_neg) * torch.log(
        torch.clamp(1.0 - p_m, min=EPS)
    )
    return (y * pos + (1.0 - y) * neg).sum()


def smooth_l1_loss(predicted, target, beta: float) -> torch.Tensor:
    """Huber-style loss summed over coordinates: 0.5 d^2/beta inside beta,
    |d| - 0.5 beta outside."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    d = torch.abs(_as_tensor(predicted) - _as_tensor(target))
    return torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta).sum()


@dataclass
class TrainingTargets:
    """Per-box targets: class label (0 = background), weight mask
    (POSITIVE / NEGATIVE / IGNORE), regression deltas for positives, and
    the matched ground-truth index (-1 if unmatched)."""

    labels: np.ndarray
    mask: np.ndarray
    reg_targets: np.ndarray
    matched_gt: np.ndarray

    @property
    def num_positive(self) -> int:
        return int((self.mask == POSITIVE).sum())


def assign_targets(
    boxes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray | None = None,
    pos_threshold: float = 0.7,
    neg_threshold: float = 0.3,
    match_best_per_gt: bool = True,
) -> TrainingTargets:
    """Match boxes to ground truth by IoU.

    Positive: IoU >= pos_threshold, or (optionally) the argmax box of each
    ground truth regardless of threshold. Negative: max IoU < neg_threshold.
    Anything else is ignored. With no ground truth, everything is negative.
    ``gt_classes`` holds foreground label ids (>= 1); positives default to 1
    when omitted (class-agnostic, as in the proposal network).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    mask = np.full(n, NEGATIVE, dtype=np.int8)
    reg = np.zeros((n, 4), dtype=np.float64)
    matched = np.full(n, -1, dtype=np.int64)
    if gt_boxes.shape[0] == 0:
        return TrainingTargets(labels, mask, reg, matched)

    ious = box_ops.iou_matrix(boxes, gt_boxes)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best_gt]

    mask[(best_iou >= neg_threshold) & (best_iou < pos_threshold)] = IGNORE
    positive = best_iou >= pos_threshold
    if match_best_per_gt:
        # every ground truth claims its highest-IoU box (ties included)
        gt_best = ious.max(axis=0)
        forced = (ious == gt_best[None, :]) & (gt_best[None, :] > 0)
        positive = positive | forced.any(axis=1)
    mask[positive] = POSITIVE
    matched[positive] = best_gt[positive]
    if gt_classes is None:
        labels[positive] = 1
    else:
        gt_classes = np.asarray(gt_classes, dtype=np.int64)
        labels[positive] = gt_classes[best_gt[positive]]
    if positive.any():
        reg[positive] = box_ops.encode_boxes(
            gt_boxes[best_gt[positive]], boxes[positive]
        )
    return TrainingTargets(labels, mask, reg, matched)


@dataclass
class LossBreakdown:
    classification: torch.Tensor
    regression: torch.Tensor
    rpn_objectness: torch.Tensor
    rpn_regression: torch.Tensor
    total: torch.Tensor

    def to_floats(self) -> dict[str, float]:
        return {
            "classification": float(self.classification),
            "regression": float(self.regression),
            "rpn_objectness": float(self.rpn_objectness),
            "rpn_regression": float(self.rpn_regression),
            "total": float(self.total),
        }


@dataclass
class RpnOutputs:
    objectness_logits: torch.Tensor  # (N,)
    deltas: torch.Tensor  # (N, 4)


@dataclass
class HeadOutputs:
    class_logits: torch.Tensor  # (M, num_classes), index 0 = background
    deltas: torch.Tensor  # (M, num_classes, 4); background row unused


@dataclass
class DetectionTargets:
    rpn: TrainingTargets
    head: TrainingTargets
    head_sample_weights: np.ndarray | None = field(default=None)


def _head_classification_loss(
    head: HeadOutputs, targets: TrainingTargets, config: LossConfig
) -> torch.Tensor:
    contributing = targets.mask != IGNORE
    count = int(contributing.sum())
    if count == 0:
        return head.class_logits.sum() * 0.0
    logits = head.class_logits[torch.as_tensor(contributing)]
    labels = torch.as_tensor(targets.labels[contributing], dtype=torch.long)
    if config.classification_kind == "cross_entropy":
        log_p = torch.log_softmax(logits, dim=1)
        loss = -log_p[torch.arange(len(labels)), labels].sum()
    else:
        # foreground logits only; background sample = all-zeros target
        probs = torch.sigmoid(logits[:, 1:])
        onehot = torch.zeros_like(probs)
        fg = labels > 0
        onehot[fg, labels[fg] - 1] = 1.0
        loss = asymmetric_focal_loss(probs, onehot, config)
    return loss / count


def multitask_loss(
    rpn_outputs: RpnOutputs,
    head_outputs: HeadOutputs,
    targets: DetectionTargets,
    config: LossConfig,
) -> LossBreakdown:
    """total = L_cls(head) + lambda * L_reg(head)
             + L_obj(rpn) + lambda * L_reg(rpn),
    each term averaged over its contributing sample count. Regression terms
    are 0 (not NaN) when there are no positives."""
    lam = config.regression_weight
    zero = rpn_outputs.objectness_logits.sum() * 0.0

    rpn_t = targets.rpn
    contributing = rpn_t.mask != IGNORE
    if contributing.any():
        sel = torch.as_tensor(contributing)
        logits = rpn_outputs.objectness_logits[sel]
        obj_target = torch.as_tensor(
            (rpn_t.mask[contributing] == POSITIVE).astype(np.float64)
        ).to(logits.dtype)
        rpn_obj = torch.nn.functional.binary_cross_entropy_with_logits(
            logits, obj_target, reduction="sum"
        ) / int(contributing.sum())
    else:
        rpn_obj = zero

    rpn_pos = rpn_t.mask == POSITIVE
    if rpn_pos.any():
        sel = torch.as_tensor(rpn_pos)
        pred = rpn_outputs.deltas[sel]
        tgt = torch.as_tensor(rpn_t.reg_targets[rpn_pos]).to(pred.dtype)
        rpn_reg = smooth_l1_loss(pred, tgt, config.smooth_l1_beta) / int(
            rpn_pos.sum()
        )
    else:
        rpn_reg = zero

    head_t = targets.head
    head_cls = _head_classification_loss(head_outputs, head_t, config)

    head_pos = head_t.mask == POSITIVE
    if head_pos.any():
        sel = torch.as_tensor(head_pos)
        labels = torch.as_tensor(head_t.labels[head_pos], dtype=torch.long)
        pred = head_outputs.deltas[sel, labels]
        tgt = torch.as_tensor(head_t.reg_targets[head_pos]).to(pred.dtype)
        head_reg = smooth_l1_loss(pred, tgt, config.smooth_l1_beta) / int(
            head_pos.sum()
        )
    else:
        head_reg = zero

    total = head_cls + lam * head_reg + rpn_obj + lam * rpn_reg
    return LossBreakdown(
        classification=head_cls,
        regression=head_reg,
        rpn_objectness=rpn_obj,
        rpn_regression=rpn_reg,
        total=total,
    )
