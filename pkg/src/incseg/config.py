"""Run configuration: key = value files, flag overrides, seed lists.

A config file holds one `key = value` pair per line; blank lines and
`#` comments are ignored. Flags override file values, which override
the built-in defaults. Unknown keys are rejected so typos fail loudly,
with the offending line number in the message.
"""

from dataclasses import dataclass

from .continual import METHODS, MethodConfig
from .errors import ConfigError
from .scenes import PRESETS, GeneratorShift, ScenarioSpec, default_universe

_INT_KEYS = (
    "images_per_session",
    "eval_images",
    "aux_size",
    "self_train_epochs",
    "epochs",
    "later_epochs",
    "batch_pixels",
)
_FLOAT_KEYS = ("aux_fraction", "aux_hue_shift", "lambda", "lr_first", "lr_later")
_BOOL_KEYS = (
    "ms_in_supervised",
    "joint_head_zero_init",
    "include_background",
    "dump_predictions",
)
_STR_KEYS = ("preset", "partition", "setting", "methods", "seeds", "aux_shapes", "out")
KNOWN_KEYS = frozenset(_INT_KEYS + _FLOAT_KEYS + _BOOL_KEYS + _STR_KEYS)

DEFAULTS = {
    "preset": "3-2",
    "setting": "disjoint",
    "methods": ",".join(METHODS),
    "seeds": "1",
    "images_per_session": "40",
    "eval_images": "30",
    "aux_size": "240",
    "aux_fraction": "1.0",
    "aux_hue_shift": "0.0",
    "aux_shapes": "",
    "self_train_epochs": "1",
    "lambda": "1.0",
    "epochs": "300",
    "later_epochs": "600",
    "batch_pixels": "512",
    "lr_first": "0.01",
    "lr_later": "0.001",
    "ms_in_supervised": "false",
    "joint_head_zero_init": "false",
    "include_background": "true",
    "dump_predictions": "false",
}


@dataclass(frozen=True)
class RunConfig:
    partition: tuple
    setting: str
    methods: tuple
    seeds: tuple
    images_per_session: int
    eval_images: int
    aux_size: int
    aux_fraction: float
    aux_hue_shift: float
    aux_shapes: tuple
    self_train_epochs: int
    lam: float
    epochs: int
    later_epochs: int
    batch_pixels: int
    lr_first: float
    lr_later: float
    ms_in_supervised: bool
    joint_head_zero_init: bool
    include_background: bool
    dump_predictions: bool
    out: str = None


def parse_config_file(path):
    """Raw key -> string values; syntax errors carry the line number."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return values


def parse_seeds(text):
    """Either "lo..hi" (inclusive) or a comma list of nonnegative ints."""
    text = text.strip()
    if ".." in text:
        lo_s, _, hi_s = text.partition("..")
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError:
            raise ConfigError(f"bad seed range {text!r}") from None
        if lo > hi:
            raise ConfigError(f"empty seed range {text!r}")
        if lo < 0:
            raise ConfigError("seeds must be nonnegative")
        return tuple(range(lo, hi + 1))
    try:
        seeds = tuple(int(s.strip()) for s in text.split(","))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be nonnegative")
    return seeds


def parse_partition(text):
    """"1,2,3|4,5" -> ((1, 2, 3), (4, 5))."""
    try:
        blocks = tuple(
            tuple(int(c.strip()) for c in chunk.split(","))
            for chunk in text.split("|")
        )
    except ValueError:
        raise ConfigError(f"bad partition {text!r}") from None
    if not blocks:
        raise ConfigError("empty partition")
    return blocks


def _typed(key, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"key {key!r}: bad number {value!r}") from None
    if key in _BOOL_KEYS:
        if value not in ("true", "false"):
            raise ConfigError(f"key {key!r}: expected true or false, got {value!r}")
        return value == "true"
    return value


def resolve_config(file_values=None, overrides=None):
    """Defaults <- config file <- flag overrides, then typed validation."""
    merged = dict(DEFAULTS)
    explicit_partition = None
    explicit_preset = None
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = value
        explicit_partition = source.get("partition", explicit_partition)
        explicit_preset = source.get("preset", explicit_preset)
    if explicit_partition and explicit_preset:
        raise ConfigError("give either preset or partition, not both")
    if explicit_partition:
        partition = parse_partition(explicit_partition)
    else:
        preset = (explicit_preset or DEFAULTS["preset"]).replace("×", "x")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        partition = PRESETS[preset]
    methods = tuple(m.strip() for m in merged["methods"].split(",") if m.strip())
    if not methods:
        raise ConfigError("no methods selected")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {list(METHODS)}")
    setting = merged["setting"]
    if setting not in ("disjoint", "overlapped"):
        raise ConfigError(f"unknown setting {setting!r}")
    shapes = tuple(s.strip() for s in merged["aux_shapes"].split(",") if s.strip())
    return RunConfig(
        partition=partition,
        setting=setting,
        methods=methods,
        seeds=parse_seeds(merged["seeds"]),
        images_per_session=_typed("images_per_session", merged["images_per_session"]),
        eval_images=_typed("eval_images", merged["eval_images"]),
        aux_size=_typed("aux_size", merged["aux_size"]),
        aux_fraction=_typed("aux_fraction", merged["aux_fraction"]),
        aux_hue_shift=_typed("aux_hue_shift", merged["aux_hue_shift"]),
        aux_shapes=shapes,
        self_train_epochs=_typed("self_train_epochs", merged["self_train_epochs"]),
        lam=_typed("lambda", merged["lambda"]),
        epochs=_typed("epochs", merged["epochs"]),
        later_epochs=_typed("later_epochs", merged["later_epochs"]),
        batch_pixels=_typed("batch_pixels", merged["batch_pixels"]),
        lr_first=_typed("lr_first", merged["lr_first"]),
        lr_later=_typed("lr_later", merged["lr_later"]),
        ms_in_supervised=_typed("ms_in_supervised", merged["ms_in_supervised"]),
        joint_head_zero_init=_typed("joint_head_zero_init", merged["joint_head_zero_init"]),
        include_background=_typed("include_background", merged["include_background"]),
        dump_predictions=_typed("dump_predictions", merged["dump_predictions"]),
        out=merged.get("out"),
    )


def build_run_inputs(cfg, method_name, seed):
    """Domain objects for one (method, seed) cell of a run grid."""
    spec = ScenarioSpec(
        class_partition=cfg.partition,
        setting=cfg.setting,
        images_per_session=cfg.images_per_session,
        seed=seed,
    )
    gen = default_universe()
    method = MethodConfig(
        method=method_name,
        lam=cfg.lam,
        aux_fraction=cfg.aux_fraction,
        self_train_epochs=cfg.self_train_epochs,
        epochs=cfg.epochs,
        later_epochs=cfg.later_epochs,
        batch_pixels=cfg.batch_pixels,
        lr_first=cfg.lr_first,
        lr_later=cfg.lr_later,
        ms_in_supervised=cfg.ms_in_supervised,
        joint_head_zero_init=cfg.joint_head_zero_init,
    )
    shift = None
    if cfg.aux_hue_shift or cfg.aux_shapes:
        shift = GeneratorShift(cfg.aux_hue_shift, cfg.aux_shapes)
    knobs = {
        "aux_size": cfg.aux_size,
        "aux_shift": shift,
        "eval_images": cfg.eval_images,
        "include_background": cfg.include_background,
        "dump_predictions": cfg.dump_predictions,
    }
    return spec, gen, method, knobs
