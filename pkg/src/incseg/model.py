"""Per-pixel softmax classifier with hand-derived gradients.

The classifier is a one-hidden-layer head over the fixed 8-dim pixel
features: logits = w2.T tanh(w1.T f + b1) + b2, trained with plain SGD.
The training loss is mean cross-entropy minus lam times the mean
prediction entropy; lam = 0 recovers pure cross-entropy. All gradients
are exact and checked against finite differences in the tests.

Pixel batches are (N, F) feature arrays paired with (N,) integer label
*indices* into the model's class_ids registry. Batch reductions run in
row-major pixel order, so single-threaded training is bit-reproducible.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation
from .features import FEATURE_DIM, feature_map

PROB_FLOOR = 1e-12  # clamp inside logs; avoids -inf on saturated softmax
DEFAULT_HIDDEN_DIM = 32


@dataclass(frozen=True)
class ModelParams:
    """Head parameters plus the registered class-id list (index 0 = background)."""

    w1: np.ndarray  # (F, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, K)
    b2: np.ndarray  # (K,)
    class_ids: tuple

    def __post_init__(self):
        f, h = self.w1.shape
        k = len(self.class_ids)
        if self.b1.shape != (h,) or self.w2.shape != (h, k) or self.b2.shape != (k,):
            raise ContractViolation("parameter shapes are inconsistent")
        if k < 1 or self.class_ids[0] != 0:
            raise ContractViolation("class_ids must start with background id 0")
        fg = self.class_ids[1:]
        if any(a >= b for a, b in zip(fg, fg[1:])) or any(c <= 0 for c in fg):
            raise ContractViolation("foreground class ids must be strictly increasing")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ContractViolation("parameters must be finite")

    @property
    def feature_dim(self):
        return self.w1.shape[0]

    @property
    def hidden_dim(self):
        return self.w1.shape[1]

    @property
    def num_classes(self):
        return len(self.class_ids)


@dataclass(frozen=True)
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters for one training phase."""

    learning_rate: float
    epochs: int = 1
    lam: float = 0.0  # entropy-maximization weight
    batch_pixels: int = 48 * 48
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")
        if self.epochs < 1:
            raise ContractViolation("epochs must be >= 1")
        if self.lam < 0:
            raise ContractViolation("lam must be nonnegative")
        if self.batch_pixels < 1:
            raise ContractViolation("batch_pixels must be positive")


def init_params(class_ids, rng, hidden_dim=DEFAULT_HIDDEN_DIM, feature_dim=FEATURE_DIM):
    """Fresh parameters, uniform in [-0.1, 0.1], drawn in w1, b1, w2, b2 order."""
    k = len(class_ids)
    w1 = rng.uniform(-0.1, 0.1, size=(feature_dim, hidden_dim))
    b1 = rng.uniform(-0.1, 0.1, size=hidden_dim)
    w2 = rng.uniform(-0.1, 0.1, size=(hidden_dim, k))
    b2 = rng.uniform(-0.1, 0.1, size=k)
    return ModelParams(w1, b1, w2, b2, tuple(int(c) for c in class_ids))


def _logits(a, w2, b2):
    """Head logits computed one class column at a time.

    Per-column products keep each logit's float stream independent of
    how many other columns exist, so expand_head provably leaves the
    old-class logits bit-identical.
    """
    out = np.empty(a.shape[:-1] + (w2.shape[1],))
    for k in range(w2.shape[1]):
        out[..., k] = a @ np.ascontiguousarray(w2[:, k]) + b2[k]
    return out


def forward(params, f):
    """Logits for one feature vector."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (params.feature_dim,):
        raise ContractViolation(
            f"feature vector has shape {f.shape}, expected ({params.feature_dim},)"
        )
    return _logits(np.tanh(f @ params.w1 + params.b1), params.w2, params.b2)


def softmax(logits):
    """Max-shifted softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ContractViolation("logits must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(q, y):
    """Cross-entropy -log q_y for one pixel; y indexes the class registry."""
    q = np.asarray(q, dtype=np.float64)
    if not 0 <= y < q.shape[-1]:
        raise ContractViolation(f"label index {y} outside [0, {q.shape[-1]})")
    return -np.log(max(q[y], PROB_FLOOR))


def self_entropy(q):
    """Prediction entropy -sum q log q, with 0 log 0 = 0."""
    q = np.asarray(q, dtype=np.float64)
    return float(-(q * np.log(np.maximum(q, PROB_FLOOR))).sum())


def _batch_forward(params, feats):
    a = np.tanh(feats @ params.w1 + params.b1)
    q = softmax(_logits(a, params.w2, params.b2))
    return a, q


def _check_batch(params, feats, labels):
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels)
    if feats.ndim != 2 or feats.shape[1] != params.feature_dim:
        raise ContractViolation("batch features must be (N, F)")
    if feats.shape[0] == 0:
        raise ContractViolation("batch must be nonempty")
    if labels.shape != (feats.shape[0],):
        raise ContractViolation("one label per batch row required")
    if labels.min() < 0 or labels.max() >= params.num_classes:
        raise ContractViolation("label index outside the model's class registry")
    return feats, labels


def total_loss(params, feats, labels, lam):
    """Mean cross-entropy minus lam * mean self-entropy over the batch."""
    if lam < 0:
        raise ContractViolation("lam must be nonnegative")
    feats, labels = _check_batch(params, feats, labels)
    _, q = _batch_forward(params, feats)
    logq = np.log(np.maximum(q, PROB_FLOOR))
    ce = -logq[np.arange(len(labels)), labels].mean()
    se = -(q * logq).sum(axis=1).mean()
    return float(ce - lam * se)


def gradient(params, feats, labels, lam):
    """Exact gradient of total_loss with respect to w1, b1, w2, b2.

    With per-row entropy H = -sum q log q, the logit gradient is
    (q - onehot(y))/N + lam/N * q * (log q + H); the rest is the usual
    tanh-layer chain rule.
    """
    if lam < 0:
        raise ContractViolation("lam must be nonnegative")
    feats, labels = _check_batch(params, feats, labels)
    n = feats.shape[0]
    a, q = _batch_forward(params, feats)
    du = q.copy()
    du[np.arange(n), labels] -= 1.0
    du /= n
    if lam != 0.0:
        logq = np.log(np.maximum(q, PROB_FLOOR))
        ent = -(q * logq).sum(axis=1, keepdims=True)
        du += (lam / n) * q * (logq + ent)
    gw2 = a.T @ du
    gb2 = du.sum(axis=0)
    dz = (du @ params.w2.T) * (1.0 - a * a)
    gw1 = feats.T @ dz
    gb1 = dz.sum(axis=0)
    return Gradients(gw1, gb1, gw2, gb2)


def sgd_step(params, grads, learning_rate):
    """One plain SGD update; the class registry is untouched."""
    pairs = (
        (params.w1, grads.w1),
        (params.b1, grads.b1),
        (params.w2, grads.w2),
        (params.b2, grads.b2),
    )
    for p, g in pairs:
        if p.shape != g.shape:
            raise ContractViolation("gradient shapes do not match parameters")
    return ModelParams(
        params.w1 - learning_rate * grads.w1,
        params.b1 - learning_rate * grads.b1,
        params.w2 - learning_rate * grads.w2,
        params.b2 - learning_rate * grads.b2,
        params.class_ids,
    )


def expand_head(params, new_class_ids, donor=None):
    """Grow the output layer by one column per new class.

    New columns are copied from the donor model when given, otherwise
    zero-initialized. Existing columns are preserved bit for bit.
    """
    new_ids = sorted(int(c) for c in new_class_ids)
    if not new_ids:
        return params
    if set(new_ids) & set(params.class_ids):
        raise ContractViolation("new class ids duplicate existing ones")
    if len(set(new_ids)) != len(new_ids):
        raise ContractViolation("new class ids contain duplicates")
    h = params.hidden_dim
    if donor is not None:
        if donor.hidden_dim != h:
            raise ContractViolation("donor hidden width does not match")
        missing = [c for c in new_ids if c not in donor.class_ids]
        if missing:
            raise ContractViolation(f"donor lacks classes {missing}")
        cols = [donor.class_ids.index(c) for c in new_ids]
        w2_new = donor.w2[:, cols]
        b2_new = donor.b2[cols]
    else:
        w2_new = np.zeros((h, len(new_ids)))
        b2_new = np.zeros(len(new_ids))
    return ModelParams(
        params.w1.copy(),
        params.b1.copy(),
        np.concatenate([params.w2, w2_new], axis=1),
        np.concatenate([params.b2, b2_new]),
        params.class_ids + tuple(new_ids),
    )


def predict_flat(params, feats):
    """Probabilities, argmax class ids, and max-prob confidence for (N, F) rows.

    Ties resolve to the lowest registry index, which favors background.
    """
    _, q = _batch_forward(params, feats)
    idx = q.argmax(axis=1)
    conf = q[np.arange(q.shape[0]), idx]
    ids = np.asarray(params.class_ids, dtype=np.int64)[idx]
    return q, ids, conf


def predict_map(params, image):
    """predict_flat over a whole image.

    Returns (prob_map (h, w, K), labels (h, w) class ids, confidence (h, w)).
    """
    fm = feature_map(image)
    h, w, f = fm.shape
    if f != params.feature_dim:
        raise ContractViolation("image features do not match the model's input width")
    q, ids, conf = predict_flat(params, fm.reshape(-1, f))
    k = params.num_classes
    return q.reshape(h, w, k), ids.reshape(h, w), conf.reshape(h, w)


def clone_params(params):
    """Deep copy with fresh arrays (training never aliases its inputs)."""
    return replace(
        params,
        w1=params.w1.copy(),
        b1=params.b1.copy(),
        w2=params.w2.copy(),
        b2=params.b2.copy(),
    )
