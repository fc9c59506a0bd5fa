"""Incremental training methods and the end-to-end scenario runner.

Methods:

  FT        sequential fine-tuning; the session-t model is the session
            t-1 model with a widened head, trained on session-t data only.
  Joint     non-incremental reference: one model trained on every
            session's images with all scenario classes labeled.
  ST        after fine-tuning, pseudo-label an unlabeled auxiliary pool
            with the previous and the fine-tuned model, fuse naively,
            and retrain a joint model initialized from the previous
            weights (new head columns copied from the fine-tuned model).
  ST+CR     ST with confidence-based conflict reduction in the fusion.
  ST+CR+MS  ST+CR plus the self-entropy bonus (weight lambda) during the
            retraining pass.

All randomness hangs off the scenario seed through named substreams, so
a (config, seed) pair replays bit-identically in a single-threaded run.
"""

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation
from .features import feature_map
from .fileio import render_labels, save_checkpoint, write_ppm
from .metrics import (
    accumulate,
    class_range_label,
    iou_report,
    new_confusion,
    write_iou_csv,
)
from .model import (
    DEFAULT_HIDDEN_DIM,
    TrainConfig,
    expand_head,
    gradient,
    init_params,
    predict_flat,
    predict_map,
    sgd_step,
)
from .pseudo import PseudoLabelMap, fuse_conflict_reduction, fuse_naive
from .scenes import build_aux_pool, build_eval_set, build_sessions, mask_labels
from .seeding import derive_rng

METHODS = ("FT", "Joint", "ST", "ST+CR", "ST+CR+MS")

# fixed order for config echoes so persisted runs compare byte-for-byte
ECHO_KEYS = (
    "partition",
    "setting",
    "methods",
    "seeds",
    "images_per_session",
    "eval_images",
    "aux_size",
    "aux_fraction",
    "aux_hue_shift",
    "aux_shapes",
    "self_train_epochs",
    "lambda",
    "epochs",
    "later_epochs",
    "batch_pixels",
    "lr_first",
    "lr_later",
    "ms_in_supervised",
    "joint_head_zero_init",
    "include_background",
    "dump_predictions",
)


@dataclass(frozen=True)
class MethodConfig:
    """One method's knobs.

    epochs drives the from-scratch phases (first task, Joint); fine-tune
    sessions run later_epochs at the 10x smaller later rate, which is why
    the default is larger. Supervised phases subsample batch_pixels per
    image step; self-training retrains on whole images for one pass.
    """

    method: str
    lam: float = 1.0
    aux_fraction: float = 1.0
    self_train_epochs: int = 1
    epochs: int = 300
    later_epochs: int = 600
    lr_first: float = 1e-2
    lr_later: float = 1e-3
    batch_pixels: int = 512
    ms_in_supervised: bool = False  # entropy bonus in supervised phases too
    joint_head_zero_init: bool = False  # skip the donor copy of new head columns
    hidden_dim: int = DEFAULT_HIDDEN_DIM

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractViolation(f"unknown method {self.method!r}")
        if self.lam < 0:
            raise ContractViolation("lambda must be nonnegative")
        if not 0.0 < self.aux_fraction <= 1.0:
            raise ContractViolation("aux_fraction must be in (0, 1]")
        if self.self_train_epochs < 1 or self.epochs < 1 or self.later_epochs < 1:
            raise ContractViolation("epoch counts must be >= 1")
        if self.lr_first <= 0 or self.lr_later <= 0:
            raise ContractViolation("learning rates must be positive")
        if self.batch_pixels < 1:
            raise ContractViolation("batch_pixels must be >= 1")
        if self.hidden_dim < 1:
            raise ContractViolation("hidden_dim must be >= 1")

    @property
    def uses_self_training(self):
        return self.method not in ("FT", "Joint")

    @property
    def uses_conflict_reduction(self):
        return self.method in ("ST+CR", "ST+CR+MS")

    @property
    def uses_entropy_bonus(self):
        return self.method == "ST+CR+MS"


@dataclass
class RunRecord:
    """Everything one (method, seed) run produced, ready to persist."""

    method: str
    seed: int
    config_echo: dict
    session_reports: tuple
    session_confusions: tuple
    session_params: tuple
    groups: dict
    class_names: dict
    include_background: bool
    counters: dict = field(default_factory=dict)
    timings: tuple = ()


def _label_lookup(class_ids):
    lut = np.full(max(class_ids) + 1, -1, dtype=np.int64)
    for idx, cid in enumerate(class_ids):
        lut[cid] = idx
    return lut


def _index_labels(lut, labels):
    flat = np.asarray(labels).reshape(-1)
    if flat.min() < 0 or flat.max() >= lut.shape[0]:
        raise ContractViolation("label outside the model's class registry")
    y = lut[flat]
    if (y < 0).any():
        raise ContractViolation("label outside the model's class registry")
    return y


def _flat_features(image):
    fm = feature_map(image)
    return fm.reshape(-1, fm.shape[-1]), fm.shape[:2]


def _fit(params, batches, cfg, rng):
    """SGD over per-image pixel batches, epoch by shuffled epoch."""
    if not batches:
        raise ContractViolation("nothing to train on")
    for _ in range(cfg.epochs):
        order = rng.permutation(len(batches))
        for bi in order:
            feats, labels = batches[bi]
            if cfg.batch_pixels < labels.shape[0]:
                sel = np.sort(
                    rng.choice(labels.shape[0], size=cfg.batch_pixels, replace=False)
                )
                feats, labels = feats[sel], labels[sel]
            grads = gradient(params, feats, labels, cfg.lam)
            params = sgd_step(params, grads, cfg.learning_rate)
    return params


def _train_fresh(class_ids, batches, cfg, hidden_dim):
    params = init_params(class_ids, derive_rng(cfg.seed, "init"), hidden_dim)
    return _fit(params, batches, cfg, derive_rng(cfg.seed, "fit", 1))


def train_first_task(session, cfg, hidden_dim=DEFAULT_HIDDEN_DIM):
    """Train the session-1 model from scratch on its masked labels."""
    if session.session_index != 1:
        raise ContractViolation("first-task training expects session index 1")
    if not session.items:
        raise ContractViolation("empty session")
    class_ids = (0, *sorted(session.current_classes))
    lut = _label_lookup(class_ids)
    batches = []
    for item in session.items:
        feats, _ = _flat_features(item.image)
        batches.append((feats, _index_labels(lut, item.labels)))
    return _train_fresh(class_ids, batches, cfg, hidden_dim)


def finetune_new_task(prev, session, cfg):
    """Widen the head with zero-init columns and train on the new session only."""
    if session.session_index < 2:
        raise ContractViolation("fine-tuning expects session index >= 2")
    if not session.items:
        raise ContractViolation("empty session")
    params = expand_head(prev, sorted(session.current_classes))
    lut = _label_lookup(params.class_ids)
    batches = []
    for item in session.items:
        feats, _ = _flat_features(item.image)
        batches.append((feats, _index_labels(lut, item.labels)))
    rng = derive_rng(cfg.seed, "fit", session.session_index)
    return _fit(params, batches, cfg, rng)


def build_joint_init(prev, finetuned, zero_init_head=False):
    """Previous weights plus new head columns donated by the fine-tuned model."""
    k_prev = len(prev.class_ids)
    if finetuned.class_ids[:k_prev] != prev.class_ids:
        raise ContractViolation("fine-tuned model does not extend the previous registry")
    new_ids = finetuned.class_ids[k_prev:]
    if not new_ids:
        raise ContractViolation("fine-tuned model adds no classes")
    donor = None if zero_init_head else finetuned
    return expand_head(prev, new_ids, donor)


def _pseudo_from_feats(params, feats, shape):
    _, ids, conf = predict_flat(params, feats)
    return PseudoLabelMap(ids.reshape(shape), conf.reshape(shape))


def self_train_retrain(
    prev,
    finetuned,
    aux_images,
    cfg,
    session_index,
    use_conflict_reduction=False,
    zero_init_head=False,
    counters=None,
):
    """Fuse pseudo-labels over the pool and retrain the joint-initialized model.

    cfg.lam > 0 turns on the self-entropy bonus during this pass.
    """
    if not len(aux_images):
        raise ContractViolation("self-training needs a nonempty auxiliary pool")
    fuse = fuse_conflict_reduction if use_conflict_reduction else fuse_naive
    joint = build_joint_init(prev, finetuned, zero_init_head)
    lut = _label_lookup(joint.class_ids)
    batches = []
    for image in aux_images:
        feats, shape = _flat_features(image)
        old_map = _pseudo_from_feats(prev, feats, shape)
        new_map = _pseudo_from_feats(finetuned, feats, shape)
        fused = fuse(old_map, new_map)
        if counters is not None:
            counters["aux_images_read"] += 1
            counters["fusion_calls"] += 1
        batches.append((feats, _index_labels(lut, fused)))
    rng = derive_rng(cfg.seed, "retrain", session_index)
    return _fit(joint, batches, cfg, rng)


def evaluate_model(params, items, num_classes):
    """Confusion matrix of a model over fully-labeled scene items."""
    cm = new_confusion(num_classes)
    for item in items:
        _, pred, _ = predict_map(params, item.image)
        accumulate(cm, item.gt_labels, pred)
    return cm


def scenario_groups(spec):
    """Class groups for reporting: the first block vs everything added later."""
    first = set(spec.class_partition[0])
    rest = {c for block in spec.class_partition[1:] for c in block}
    groups = {class_range_label(first): first}
    if rest:
        groups[class_range_label(rest)] = rest
    return groups


def _select_aux_subset(pool, fraction, seed):
    n = len(pool.images)
    keep = math.ceil(fraction * n)
    if keep >= n:
        return pool.images
    rng = derive_rng(seed, "auxsub")
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    return tuple(pool.images[i] for i in idx)


def _echo(spec, method, aux_size, aux_shift, eval_images, include_background, dump):
    hue = aux_shift.hue_shift if aux_shift else 0.0
    shapes = ",".join(aux_shift.shape_vocabulary) if aux_shift else ""
    values = {
        "partition": "|".join(
            ",".join(str(c) for c in block) for block in spec.class_partition
        ),
        "setting": spec.setting,
        "methods": method.method,
        "seeds": str(spec.seed),
        "images_per_session": str(spec.images_per_session),
        "eval_images": str(eval_images),
        "aux_size": str(aux_size),
        "aux_fraction": repr(float(method.aux_fraction)),
        "aux_hue_shift": repr(float(hue)),
        "aux_shapes": shapes,
        "self_train_epochs": str(method.self_train_epochs),
        "lambda": repr(float(method.lam)),
        "epochs": str(method.epochs),
        "later_epochs": str(method.later_epochs),
        "batch_pixels": str(method.batch_pixels),
        "lr_first": repr(float(method.lr_first)),
        "lr_later": repr(float(method.lr_later)),
        "ms_in_supervised": "true" if method.ms_in_supervised else "false",
        "joint_head_zero_init": "true" if method.joint_head_zero_init else "false",
        "include_background": "true" if include_background else "false",
        "dump_predictions": "true" if dump else "false",
    }
    return {k: values[k] for k in ECHO_KEYS}


def run_scenario(
    spec,
    gen,
    method,
    *,
    aux_size=240,
    aux_shift=None,
    eval_images=30,
    include_background=True,
    out_dir=None,
    dump_predictions=False,
):
    """Run one method over one scenario seed; optionally persist artifacts."""
    if method.uses_self_training and aux_size < 1:
        raise ContractViolation("self-training methods need aux_size >= 1")
    timings = []
    counters = {"aux_images_read": 0, "fusion_calls": 0}
    supervised_lam = method.lam if method.ms_in_supervised else 0.0
    first_cfg = TrainConfig(
        method.lr_first,
        epochs=method.epochs,
        lam=supervised_lam,
        batch_pixels=method.batch_pixels,
        seed=spec.seed,
    )
    later_cfg = TrainConfig(
        method.lr_later,
        epochs=method.later_epochs,
        lam=supervised_lam,
        batch_pixels=method.batch_pixels,
        seed=spec.seed,
    )
    # retraining consumes whole images, one batch per image, for one pass
    retrain_cfg = TrainConfig(
        method.lr_later,
        epochs=method.self_train_epochs,
        lam=method.lam if method.uses_entropy_bonus else 0.0,
        seed=spec.seed,
    )

    t0 = time.perf_counter()
    sessions = build_sessions(spec, gen)
    aux_subset = ()
    if method.uses_self_training:
        pool = build_aux_pool(replace(gen, seed=spec.seed), aux_size, aux_shift)
        aux_subset = _select_aux_subset(pool, method.aux_fraction, spec.seed)
    timings.append(("generate", time.perf_counter() - t0))

    t0 = time.perf_counter()
    if method.method == "Joint":
        all_classes = sorted({c for b in spec.class_partition for c in b})
        class_ids = (0, *all_classes)
        lut = _label_lookup(class_ids)
        batches = []
        for session in sessions:
            for item in session.items:
                feats, _ = _flat_features(item.image)
                joint_labels = mask_labels(item.gt_labels, all_classes)
                batches.append((feats, _index_labels(lut, joint_labels)))
        params = _train_fresh(class_ids, batches, first_cfg, method.hidden_dim)
        retained = [params] * len(sessions)
    else:
        retained = []
        prev = None
        for session in sessions:
            if session.session_index == 1:
                params = train_first_task(session, first_cfg, method.hidden_dim)
            else:
                finetuned = finetune_new_task(prev, session, later_cfg)
                if method.uses_self_training:
                    params = self_train_retrain(
                        prev,
                        finetuned,
                        aux_subset,
                        retrain_cfg,
                        session.session_index,
                        method.uses_conflict_reduction,
                        method.joint_head_zero_init,
                        counters,
                    )
                else:
                    params = finetuned
            retained.append(params)
            prev = params
    timings.append(("train", time.perf_counter() - t0))

    t0 = time.perf_counter()
    num_classes = max(gen.classes) + 1
    groups = scenario_groups(spec)
    reports = []
    cms = []
    probes = []
    for t, params in enumerate(retained, start=1):
        items = build_eval_set(spec, gen, t, eval_images)
        cm = evaluate_model(params, items, num_classes)
        reports.append(iou_report(cm, groups, include_background))
        cms.append(cm)
        if dump_predictions:
            probes.append((t, params, items[: min(4, len(items))]))
    timings.append(("evaluate", time.perf_counter() - t0))

    record = RunRecord(
        method=method.method,
        seed=spec.seed,
        config_echo=_echo(
            spec, method, aux_size, aux_shift, eval_images, include_background,
            dump_predictions,
        ),
        session_reports=tuple(reports),
        session_confusions=tuple(cms),
        session_params=tuple(retained),
        groups=groups,
        class_names={cid: d.name for cid, d in gen.classes.items()},
        include_background=include_background,
        counters=counters,
        timings=tuple(timings),
    )
    if out_dir is not None:
        persist_run_record(record, out_dir)
        for t, params, items in probes:
            for k, item in enumerate(items):
                _, pred, _ = predict_map(params, item.image)
                write_ppm(
                    render_labels(pred),
                    os.path.join(out_dir, f"pred_session_{t}_probe_{k}.ppm"),
                )
    return record


def persist_run_record(record, out_dir):
    """Write config echo, per-session checkpoints and CSVs, counters, timings.

    Everything except timings.txt is byte-deterministic for a fixed
    (config, seed) single-threaded run.
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", newline="\n") as fh:
        for key in ECHO_KEYS:
            fh.write(f"{key} = {record.config_echo[key]}\n")
    pairs = zip(record.session_params, record.session_confusions)
    for t, (params, cm) in enumerate(pairs, start=1):
        save_checkpoint(params, os.path.join(out_dir, f"session_{t}.ckpt"))
        write_iou_csv(
            cm,
            os.path.join(out_dir, f"metrics_session_{t}.csv"),
            groups=record.groups,
            class_names=record.class_names,
            include_background=record.include_background,
        )
    with open(os.path.join(out_dir, "counters.txt"), "w", newline="\n") as fh:
        for key in sorted(record.counters):
            fh.write(f"{key} {record.counters[key]}\n")
    with open(os.path.join(out_dir, "timings.txt"), "w", newline="\n") as fh:
        for name, seconds in record.timings:
            fh.write(f"{name} {seconds:.3f}\n")
