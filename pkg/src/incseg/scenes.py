"""Synthetic scene generation and the class-incremental protocol.

Scenes are small RGB canvases with flat-colored geometric objects over a
noisy gray background. Each foreground class is a fixed (shape, color)
pair; the label map is the exact ground truth of the visible (topmost)
object at every pixel, with 0 for background.

A scenario splits the foreground classes into per-session blocks. Under
the disjoint setting, session-t images are drawn using only classes seen
so far plus the current block; under the overlapped setting they are
drawn from the whole universe. Either way an image is kept only if it
shows at least one pixel of a current-block class, and its labels are
then masked so that everything outside the current block becomes
background.
"""

import colorsys
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, GenerationExhausted
from .seeding import derive_rng

SHAPES = ("disk", "square", "triangle", "cross", "ring")

# ids 1-5 (the scenario classes) get well-separated colors; 6-10 appear only
# in auxiliary pools and sit near the first five, so pseudo-labelers claim
# them with nontrivial confidence and fusion sees real conflicts
_BASE_COLORS = (
    ("red", (0.85, 0.10, 0.10)),
    ("green", (0.10, 0.75, 0.15)),
    ("blue", (0.15, 0.20, 0.85)),
    ("yellow", (0.90, 0.85, 0.10)),
    ("magenta", (0.80, 0.05, 0.90)),
    ("orange", (0.90, 0.45, 0.05)),
    ("cyan", (0.05, 0.70, 0.75)),
    ("violet", (0.55, 0.10, 0.80)),
    ("teal", (0.05, 0.45, 0.40)),
    ("brown", (0.55, 0.30, 0.10)),
)

# class-block partitions per preset; "3-1x2" adds its last two classes one at a time
PRESETS = {
    "4-1": ((1, 2, 3, 4), (5,)),
    "3-2": ((1, 2, 3), (4, 5)),
    "3-1x2": ((1, 2, 3), (4,), (5,)),
}


@dataclass(frozen=True)
class ClassDef:
    shape: str
    color: tuple
    name: str


@dataclass(frozen=True)
class GeneratorShift:
    """Distribution shift applied to an auxiliary pool's generator."""

    hue_shift: float = 0.0
    shape_vocabulary: tuple = ()


@dataclass(frozen=True)
class GeneratorConfig:
    classes: dict  # class id -> ClassDef; ids are positive ints
    height: int = 48
    width: int = 48
    objects_per_image: tuple = (1, 3)
    size_range: tuple = (6.0, 11.0)
    noise_amplitude: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not self.classes or any(c <= 0 for c in self.classes):
            raise ContractViolation("class universe must use positive ids")
        pairs = [(d.shape, d.color) for d in self.classes.values()]
        if len(set(pairs)) != len(pairs):
            raise ContractViolation("class -> (shape, color) mapping must be injective")
        for d in self.classes.values():
            if d.shape not in SHAPES:
                raise ContractViolation(f"unknown shape {d.shape!r}")
        lo, hi = self.objects_per_image
        if not (1 <= lo <= hi):
            raise ContractViolation("objects_per_image range must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class ScenarioSpec:
    """Class partition across sessions plus the protocol setting.

    Partition blocks must be in ascending class-id order so the model's
    class registry grows monotonically over sessions.
    """

    class_partition: tuple  # tuple of tuples of class ids
    setting: str = "disjoint"
    images_per_session: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.setting not in ("disjoint", "overlapped"):
            raise ContractViolation(f"unknown setting {self.setting!r}")
        if self.images_per_session < 1:
            raise ContractViolation("images_per_session must be >= 1")
        seen = set()
        prev_max = 0
        for block in self.class_partition:
            if not block:
                raise ContractViolation("empty session block")
            if 0 in block:
                raise ContractViolation("background id 0 cannot be partitioned")
            if seen & set(block):
                raise ContractViolation("partition blocks must be disjoint")
            if min(block) <= prev_max:
                raise ContractViolation("partition blocks must be in ascending id order")
            seen |= set(block)
            prev_max = max(block)


@dataclass(frozen=True)
class SceneItem:
    image: np.ndarray  # (h, w, 3) in [0, 1]
    labels: np.ndarray  # (h, w) ids after masking (or full gt for eval items)
    gt_labels: np.ndarray  # (h, w) pre-mask ground truth


@dataclass(frozen=True)
class SessionDataset:
    items: tuple
    session_index: int  # 1-based
    current_classes: frozenset
    cumulative_classes: frozenset  # includes background 0


@dataclass(frozen=True)
class AuxiliaryPool:
    """Unlabeled images for pseudo-label rehearsal; never carries labels."""

    images: tuple
    generator_shift: GeneratorShift = field(default_factory=GeneratorShift)


@dataclass(frozen=True)
class Placement:
    class_id: int
    shape: str
    color: tuple
    ci: float
    cj: float
    size: float


def default_universe(num_classes=10, **overrides):
    """The stock 10-class universe: shapes cycle, colors stay distinct."""
    if not 1 <= num_classes <= len(_BASE_COLORS):
        raise ContractViolation(f"num_classes must be in [1, {len(_BASE_COLORS)}]")
    classes = {}
    for i in range(num_classes):
        shape = SHAPES[i % len(SHAPES)]
        cname, color = _BASE_COLORS[i]
        classes[i + 1] = ClassDef(shape, color, f"{shape}-{cname}")
    return GeneratorConfig(classes=classes, **overrides)


def shift_hue(color, amount):
    """Rotate an RGB color's hue by `amount` turns."""
    h, s, v = colorsys.rgb_to_hsv(*color)
    return colorsys.hsv_to_rgb((h + amount) % 1.0, s, v)


def apply_shift(cfg, shift):
    """Generator with hue-rotated colors and/or substituted shapes."""
    vocab = tuple(shift.shape_vocabulary)
    for s in vocab:
        if s not in SHAPES:
            raise ContractViolation(f"unknown shape {s!r} in vocabulary")
    classes = {}
    for rank, cid in enumerate(sorted(cfg.classes)):
        d = cfg.classes[cid]
        shape = vocab[rank % len(vocab)] if vocab else d.shape
        color = shift_hue(d.color, shift.hue_shift) if shift.hue_shift else d.color
        classes[cid] = ClassDef(shape, color, d.name)
    return replace(cfg, classes=classes)


def shape_mask(shape, ci, cj, size, h, w):
    """Boolean (h, w) mask of pixels inside the shape's analytic extent."""
    ii = np.arange(h, dtype=np.float64)[:, None]
    jj = np.arange(w, dtype=np.float64)[None, :]
    di = ii - ci
    dj = jj - cj
    if shape == "disk":
        return di * di + dj * dj <= size * size
    if shape == "square":
        return np.maximum(np.abs(di), np.abs(dj)) <= size
    if shape == "triangle":
        # apex at the top row, base at the bottom, half-width grows with depth
        return (di >= -size) & (di <= size) & (np.abs(dj) <= (di + size) / 2.0)
    if shape == "cross":
        arm = size / 3.0
        return ((np.abs(di) <= size) & (np.abs(dj) <= arm)) | (
            (np.abs(dj) <= size) & (np.abs(di) <= arm)
        )
    if shape == "ring":
        d2 = di * di + dj * dj
        return (d2 >= (size / 2.0) ** 2) & (d2 <= size * size)
    raise ContractViolation(f"unknown shape {shape!r}")


def sample_placements(cfg, allowed_classes, rng, lead_classes=None, lead_bias=0.0):
    """Draw object count, classes, sizes, and centers for one scene.

    When lead_classes is given the last (topmost, never occluded) object's
    class is drawn from it, so session scenes reliably foreground their
    novel classes; lead_bias additionally redirects that fraction of the
    remaining draws to lead_classes. Sizes are clamped so every object
    fits fully inside the canvas.
    """
    allowed = sorted(set(allowed_classes))
    if not allowed or not set(allowed) <= set(cfg.classes):
        raise ContractViolation("allowed_classes must be a nonempty subset of the universe")
    lead = sorted(set(lead_classes)) if lead_classes else allowed
    if not set(lead) <= set(allowed):
        raise ContractViolation("lead_classes must be a subset of allowed_classes")
    if not 0.0 <= lead_bias <= 1.0:
        raise ContractViolation("lead_bias must be in [0, 1]")
    lo, hi = cfg.objects_per_image
    count = int(rng.integers(lo, hi + 1))
    fit_max = (min(cfg.height, cfg.width) - 2) / 2.0
    size_lo = min(cfg.size_range[0], fit_max)
    size_hi = min(cfg.size_range[1], fit_max)
    out = []
    for k in range(count):
        if k == count - 1 or (lead_bias > 0.0 and rng.uniform() < lead_bias):
            pool = lead
        else:
            pool = allowed
        cid = pool[int(rng.integers(len(pool)))]
        d = cfg.classes[cid]
        size = float(rng.uniform(size_lo, size_hi))
        ci = float(rng.uniform(size, cfg.height - 1 - size))
        cj = float(rng.uniform(size, cfg.width - 1 - size))
        out.append(Placement(cid, d.shape, d.color, ci, cj, size))
    return out


def render_scene(cfg, placements, rng):
    """Rasterize placements over a gray background; later objects occlude."""
    h, w = cfg.height, cfg.width
    image = np.full((h, w, 3), 0.5)
    labels = np.zeros((h, w), dtype=np.int64)
    for p in placements:
        mask = shape_mask(p.shape, p.ci, p.cj, p.size, h, w)
        image[mask] = p.color
        labels[mask] = p.class_id
    if cfg.noise_amplitude > 0:
        image = image + cfg.noise_amplitude * rng.uniform(-1.0, 1.0, size=(h, w, 3))
        image = np.clip(image, 0.0, 1.0)
    return image, labels


def generate_scene(cfg, allowed_classes, rng, lead_classes=None, lead_bias=0.0):
    """One (image, label map) pair; deterministic for a given generator state."""
    placements = sample_placements(cfg, allowed_classes, rng, lead_classes, lead_bias)
    return render_scene(cfg, placements, rng)


def mask_labels(gt, current_classes):
    """Keep only current-class labels; everything else becomes background."""
    gt = np.asarray(gt)
    current = sorted(set(current_classes))
    if not current:
        return np.zeros_like(gt)
    return np.where(np.isin(gt, current), gt, 0)


def _fill(cfg, allowed, keep_classes, count, rng, what, lead_classes=None, lead_bias=0.0):
    """Rejection-sample `count` scenes containing >= 1 pixel of keep_classes."""
    keep = sorted(keep_classes)
    budget = 10 * count
    items = []
    attempts = 0
    while len(items) < count:
        if attempts >= budget:
            raise GenerationExhausted(
                f"could not generate {count} {what} scenes with classes {keep} "
                f"within {budget} attempts"
            )
        attempts += 1
        image, gt = generate_scene(cfg, allowed, rng, lead_classes, lead_bias)
        if np.isin(gt, keep).any():
            items.append((image, gt))
    return items


def build_sessions(spec, cfg):
    """Materialize the per-session datasets for a scenario."""
    universe = set(cfg.classes)
    flat = {c for block in spec.class_partition for c in block}
    if not flat <= universe:
        raise ContractViolation("partition references classes outside the universe")
    sessions = []
    cumulative = set()
    for t, block in enumerate(spec.class_partition, start=1):
        current = set(block)
        rng = derive_rng(spec.seed, "session", t)
        allowed = (cumulative | current) if spec.setting == "disjoint" else universe
        raw = _fill(
            cfg, allowed, current, spec.images_per_session, rng, f"session-{t}",
            lead_classes=current, lead_bias=0.5,
        )
        items = tuple(
            SceneItem(image, mask_labels(gt, current), gt) for image, gt in raw
        )
        cumulative |= current
        sessions.append(
            SessionDataset(items, t, frozenset(current), frozenset({0} | cumulative))
        )
    return sessions


def build_eval_set(spec, cfg, upto_session, count):
    """Held-out fully-labeled scenes over all classes seen by session t.

    Image k is required to show class seen[k mod n], so every seen class
    is represented. Labels are the unmasked ground truth.
    """
    seen = sorted({c for block in spec.class_partition[:upto_session] for c in block})
    if not seen:
        raise ContractViolation("no classes seen by the requested session")
    rng = derive_rng(spec.seed, "eval", upto_session)
    items = []
    for k in range(count):
        forced = [seen[k % len(seen)]]
        (image, gt), = _fill(
            cfg, seen, forced, 1, rng, f"eval-{upto_session}", lead_classes=forced
        )
        items.append(SceneItem(image, gt, gt))
    return tuple(items)


def build_aux_pool(cfg, size, shift=None):
    """Unlabeled pool over the full (possibly shifted) universe."""
    if size < 1:
        raise ContractViolation("pool size must be >= 1")
    shift = shift or GeneratorShift()
    eff = apply_shift(cfg, shift) if (shift.hue_shift or shift.shape_vocabulary) else cfg
    rng = derive_rng(cfg.seed, "aux")
    images = tuple(
        generate_scene(eff, set(eff.classes), rng)[0] for _ in range(size)
    )
    return AuxiliaryPool(images, shift)


def preset_partition(name):
    """Look up a shipped scenario preset ("4-1", "3-2", "3-1x2")."""
    key = name.replace("×", "x")
    if key not in PRESETS:
        raise ContractViolation(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key]
