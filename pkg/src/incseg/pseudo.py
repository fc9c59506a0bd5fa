"""Pseudo-label maps and the two fusion rules.

Fusion combines the previous model's predictions (authority on old
classes) with the current fine-tuned model's predictions (authority on
new classes) into one label map used for retraining:

  naive:  background/background -> background, one side foreground ->
          that side, both foreground -> the old model wins.
  conflict reduction: as naive, except both-foreground pixels go to
          whichever model is strictly more confident; ties keep the
          old label.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .model import predict_map


@dataclass(frozen=True)
class PseudoLabelMap:
    labels: np.ndarray  # (h, w) class ids
    confidence: np.ndarray  # (h, w) max softmax probability

    def __post_init__(self):
        if self.labels.shape != self.confidence.shape:
            raise ContractViolation("labels and confidence shapes differ")


def pseudo_label(params, image):
    """Predict a scene and keep only what fusion needs."""
    _, labels, confidence = predict_map(params, image)
    return PseudoLabelMap(labels, confidence)


def _check_pair(old, new):
    if old.labels.shape != new.labels.shape:
        raise ContractViolation("pseudo-label maps have mismatched shapes")


def fuse_naive(old, new):
    """Old model wins wherever it says foreground."""
    _check_pair(old, new)
    return np.where(old.labels > 0, old.labels, new.labels)


def fuse_conflict_reduction(old, new):
    """Confidence breaks both-foreground conflicts; ties keep the old label."""
    _check_pair(old, new)
    fused = np.where(old.labels > 0, old.labels, new.labels)
    conflict = (old.labels > 0) & (new.labels > 0)
    new_wins = conflict & (new.confidence > old.confidence)
    return np.where(new_wins, new.labels, fused)
