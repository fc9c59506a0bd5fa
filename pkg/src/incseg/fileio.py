"""On-disk formats: checkpoints, PPM images, label and confidence maps.

Checkpoints are line-oriented text with weights as repr'd doubles, so a
load/save round trip is bit-exact. Images travel as binary PPM (P6);
label and confidence maps as whitespace-separated text with a "h w"
header line.
"""

import numpy as np

from .errors import CheckpointError, ContractViolation
from .model import ModelParams

CHECKPOINT_MAGIC = "incseg-checkpoint"
CHECKPOINT_VERSION = 1

# distinct display colors; label ids beyond the table wrap around
PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 25, 75),
        (60, 180, 75),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (255, 225, 25),
        (240, 50, 230),
        (0, 128, 128),
        (170, 110, 40),
        (128, 0, 0),
        (0, 0, 128),
        (255, 250, 200),
        (128, 128, 0),
    ],
    dtype=np.uint8,
)


def _fmt_array(a):
    return " ".join(repr(float(x)) for x in np.asarray(a, dtype=np.float64).ravel())


def save_checkpoint(params, path):
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"feature_dim {params.feature_dim}",
        f"hidden_dim {params.hidden_dim}",
        "class_ids " + " ".join(str(c) for c in params.class_ids),
        "w1 " + _fmt_array(params.w1),
        "b1 " + _fmt_array(params.b1),
        "w2 " + _fmt_array(params.w2),
        "b2 " + _fmt_array(params.b2),
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _take(fields, name, count, lineno):
    if fields[0] != name:
        raise CheckpointError(f"line {lineno}: expected {name!r}, got {fields[0]!r}")
    if len(fields) - 1 != count:
        raise CheckpointError(
            f"line {lineno}: {name} carries {len(fields) - 1} values, expected {count}"
        )
    return fields[1:]


def load_checkpoint(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if len(lines) != 8:
        raise CheckpointError(f"expected 8 checkpoint lines, found {len(lines)}")
    head = lines[0].split()
    if head[:1] != [CHECKPOINT_MAGIC]:
        raise CheckpointError("not a checkpoint file")
    if head[1:] != [str(CHECKPOINT_VERSION)]:
        raise CheckpointError(f"unsupported checkpoint version {head[1:]}")
    try:
        f = int(_take(lines[1].split(), "feature_dim", 1, 2)[0])
        h = int(_take(lines[2].split(), "hidden_dim", 1, 3)[0])
        ids_f = lines[3].split()
        if ids_f[0] != "class_ids" or len(ids_f) < 2:
            raise CheckpointError("line 4: bad class_ids")
        class_ids = tuple(int(c) for c in ids_f[1:])
        k = len(class_ids)
        w1 = [float(x) for x in _take(lines[4].split(), "w1", f * h, 5)]
        b1 = [float(x) for x in _take(lines[5].split(), "b1", h, 6)]
        w2 = [float(x) for x in _take(lines[6].split(), "w2", h * k, 7)]
        b2 = [float(x) for x in _take(lines[7].split(), "b2", k, 8)]
    except ValueError as exc:
        raise CheckpointError(f"malformed number in checkpoint: {exc}") from None
    try:
        return ModelParams(
            np.array(w1).reshape(f, h),
            np.array(b1),
            np.array(w2).reshape(h, k),
            np.array(b2),
            class_ids,
        )
    except ContractViolation as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from None


def write_ppm(image, path):
    """Binary P6 with maxval 255; floats in [0, 1] are scaled and rounded."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractViolation("expected an (h, w, 3) image")
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _read_token(fh):
    # skip whitespace and '#' comments, then read one token
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            raise ContractViolation("truncated PPM header")
        if c == b"#":
            while c and c != b"\n":
                c = fh.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm(path):
    """(h, w, 3) float image in [0, 1] from a binary P6 file."""
    with open(path, "rb") as fh:
        if _read_token(fh) != b"P6":
            raise ContractViolation(f"{path} is not a binary PPM (P6)")
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if maxval != 255:
            raise ContractViolation("only maxval 255 PPMs are supported")
        data = fh.read(h * w * 3)
    if len(data) != h * w * 3:
        raise ContractViolation("truncated PPM pixel data")
    raster = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return raster.astype(np.float64) / 255.0


def write_label_file(labels, path):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ContractViolation("label map must be 2-D")
    h, w = labels.shape
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{h} {w}\n")
        for row in labels:
            fh.write(" ".join(str(int(x)) for x in row) + "\n")


def read_label_file(path):
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ContractViolation(f"{path}: missing label header")
    h, w = int(tokens[0]), int(tokens[1])
    body = tokens[2:]
    if len(body) != h * w:
        raise ContractViolation(f"{path}: expected {h * w} labels, found {len(body)}")
    return np.array([int(x) for x in body], dtype=np.int64).reshape(h, w)


def write_confidence_file(conf, path):
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 2:
        raise ContractViolation("confidence map must be 2-D")
    h, w = conf.shape
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{h} {w}\n")
        for row in conf:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_confidence_file(path):
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ContractViolation(f"{path}: missing confidence header")
    h, w = int(tokens[0]), int(tokens[1])
    body = tokens[2:]
    if len(body) != h * w:
        raise ContractViolation(f"{path}: expected {h * w} values, found {len(body)}")
    return np.array([float(x) for x in body], dtype=np.float64).reshape(h, w)


def render_labels(labels):
    """Palette-colored uint8 image for quick visual inspection."""
    labels = np.asarray(labels)
    return PALETTE[labels % len(PALETTE)]
