"""Command line front end.

Subcommands:

  generate  materialize a scenario's sessions, eval sets, and aux pool
  run       train methods over seeds, persist run dirs, print a summary
  fuse      fuse two pseudo-label map files into one label file
  fd        relatedness (Fréchet distance) between two image directories
  eval      score a checkpoint against a directory of labeled scenes

Every failure is one line on stderr and exit code 1. The output root
comes from --out, falling back to the INCSEG_OUT environment variable.
"""

import argparse
import os
import statistics
import sys
from glob import glob

from .config import (
    DEFAULTS,
    build_run_inputs,
    parse_config_file,
    parse_partition,
    resolve_config,
)
from .continual import METHODS, run_scenario
from .errors import CheckpointError, ConfigError, ContractViolation, GenerationExhausted
from .fileio import (
    load_checkpoint,
    read_confidence_file,
    read_label_file,
    read_ppm,
    write_label_file,
    write_ppm,
)
from .metrics import accumulate, iou_report, new_confusion, write_iou_csv
from .model import predict_map
from .pseudo import PseudoLabelMap, fuse_conflict_reduction, fuse_naive
from .relatedness import collection_stats, frechet_distance
from .scenes import (
    GeneratorShift,
    ScenarioSpec,
    build_aux_pool,
    build_eval_set,
    build_sessions,
    default_universe,
    preset_partition,
)

OUT_ENV = "INCSEG_OUT"


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is one line, exit 1
    def error(self, message):
        raise _CliError(message)


def _out_root(flag_value, required=True):
    root = flag_value or os.environ.get(OUT_ENV)
    if required and not root:
        raise _CliError(f"no output directory: pass --out or set {OUT_ENV}")
    return root


def method_slug(name):
    return name.lower().replace("+", "_")


def _scenario_from_args(args):
    if args.partition and args.preset:
        raise ConfigError("give either --preset or --partition, not both")
    if args.partition:
        partition = parse_partition(args.partition)
    else:
        partition = preset_partition(args.preset or DEFAULTS["preset"])
    return ScenarioSpec(
        class_partition=partition,
        setting=args.setting,
        images_per_session=args.images,
        seed=args.seed,
    )


def _dump_scene(dirname, index, image, labels=None, gt=None):
    stem = os.path.join(dirname, f"scene_{index:04d}")
    write_ppm(image, stem + ".ppm")
    if labels is not None:
        write_label_file(labels, stem + ".labels.txt")
    if gt is not None:
        write_label_file(gt, stem + ".gt.txt")


def cmd_generate(args):
    root = _out_root(args.out)
    spec = _scenario_from_args(args)
    gen = default_universe(seed=args.seed)
    sessions = build_sessions(spec, gen)
    for session in sessions:
        t = session.session_index
        sdir = os.path.join(root, f"session_{t}")
        os.makedirs(sdir, exist_ok=True)
        for i, item in enumerate(session.items):
            _dump_scene(sdir, i, item.image, item.labels, item.gt_labels)
        edir = os.path.join(root, f"eval_{t}")
        os.makedirs(edir, exist_ok=True)
        for i, item in enumerate(build_eval_set(spec, gen, t, args.eval_images)):
            _dump_scene(edir, i, item.image, item.labels)
    if args.aux_size > 0:
        shift = None
        if args.aux_hue_shift or args.aux_shapes:
            shapes = tuple(s for s in args.aux_shapes.split(",") if s)
            shift = GeneratorShift(args.aux_hue_shift, shapes)
        adir = os.path.join(root, "aux")
        os.makedirs(adir, exist_ok=True)
        pool = build_aux_pool(gen, args.aux_size, shift)
        for i, image in enumerate(pool.images):
            _dump_scene(adir, i, image)
    print(f"wrote {len(sessions)} session(s) under {root}")
    return 0


_RUN_KEYS = tuple(k for k in DEFAULTS) + ("partition", "out")


def cmd_run(args):
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for key in _RUN_KEYS:
        value = vars(args).get(key)
        if value is not None:
            overrides[key] = value
    cfg = resolve_config(file_values, overrides)
    root = _out_root(cfg.out, required=False)

    finals = {}  # method -> list of final-session reports over seeds
    groups = None
    for method_name in cfg.methods:
        finals[method_name] = []
        for seed in cfg.seeds:
            spec, gen, method, knobs = build_run_inputs(cfg, method_name, seed)
            out_dir = None
            if root:
                out_dir = os.path.join(root, f"{method_slug(method_name)}_seed{seed}")
            record = run_scenario(spec, gen, method, out_dir=out_dir, **knobs)
            finals[method_name].append(record.session_reports[-1])
            groups = record.groups
    _print_summary(cfg, finals, groups, root)
    return 0


def _print_summary(cfg, finals, groups, root):
    labels = list(groups) + ["all"]
    seed_list = ",".join(str(s) for s in cfg.seeds)
    partition = "|".join(",".join(str(c) for c in b) for b in cfg.partition)
    print(f"scenario {partition} {cfg.setting}  median over seeds {seed_list}")
    widths = [max(len(lbl), 5) for lbl in labels]
    name_w = max(len(m) for m in finals)
    header = "method".ljust(name_w) + "".join(
        "  " + lbl.rjust(w) for lbl, w in zip(labels, widths)
    )
    print(header)
    rows = []
    for method_name, reports in finals.items():
        cells = []
        for lbl, w in zip(labels, widths):
            if lbl == "all":
                vals = [r.overall for r in reports]
            else:
                vals = [r.group_miou[lbl] for r in reports if lbl in r.group_miou]
            cell = f"{100.0 * statistics.median(vals):.1f}" if vals else "n/a"
            cells.append(cell.rjust(w))
        print(method_name.ljust(name_w) + "".join("  " + c for c in cells))
        rows.append((method_name, cells))
    if root:
        os.makedirs(root, exist_ok=True)
        with open(os.path.join(root, "summary.csv"), "w", newline="\n") as fh:
            fh.write("method," + ",".join(labels) + "\n")
            for method_name, cells in rows:
                fh.write(method_name + "," + ",".join(c.strip() for c in cells) + "\n")


def cmd_fuse(args):
    old = PseudoLabelMap(
        read_label_file(args.old_labels), read_confidence_file(args.old_conf)
    )
    new = PseudoLabelMap(
        read_label_file(args.new_labels), read_confidence_file(args.new_conf)
    )
    fuse = {"naive": fuse_naive, "cr": fuse_conflict_reduction}[args.mode]
    write_label_file(fuse(old, new), args.out)
    return 0


def _load_dir_images(dirname):
    paths = sorted(glob(os.path.join(dirname, "*.ppm")))
    if len(paths) < 2:
        raise ContractViolation(f"{dirname}: need >= 2 PPM images")
    return [read_ppm(p) for p in paths]


def cmd_fd(args):
    stats_a = collection_stats(_load_dir_images(args.dir_a))
    stats_b = collection_stats(_load_dir_images(args.dir_b))
    print(f"{frechet_distance(stats_a, stats_b):.6f}")
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    pairs = []
    for ppm in sorted(glob(os.path.join(args.data, "*.ppm"))):
        label_path = ppm[: -len(".ppm")] + ".labels.txt"
        if os.path.exists(label_path):
            pairs.append((ppm, label_path))
    if not pairs:
        raise ContractViolation(f"{args.data}: no scene/label pairs found")
    max_id = params.class_ids[-1]
    gts = []
    preds = []
    for ppm, label_path in pairs:
        gt = read_label_file(label_path)
        _, pred, _ = predict_map(params, read_ppm(ppm))
        max_id = max(max_id, int(gt.max()))
        gts.append(gt)
        preds.append(pred)
    cm = new_confusion(max_id + 1)
    for gt, pred in zip(gts, preds):
        accumulate(cm, gt, pred)
    report = iou_report(cm, include_background=not args.exclude_background)
    for cid in sorted(report.per_class):
        print(f"class {cid}: {100.0 * report.per_class[cid]:.1f}")
    print(f"overall: {100.0 * report.overall:.1f}")
    if args.csv:
        write_iou_csv(cm, args.csv, include_background=not args.exclude_background)
    return 0


def _add_scenario_flags(p):
    p.add_argument("--preset", help="shipped partition: 4-1, 3-2, or 3-1x2")
    p.add_argument("--partition", help='explicit blocks, e.g. "1,2,3|4,5"')
    p.add_argument("--setting", default="disjoint", choices=["disjoint", "overlapped"])
    p.add_argument("--seed", type=int, default=1)


def build_parser():
    top = _Parser(prog="incseg", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[], help="write scenario data to disk")
    _add_scenario_flags(g)
    g.add_argument("--images", type=int, default=40, help="labeled images per session")
    g.add_argument("--eval-images", type=int, default=30)
    g.add_argument("--aux-size", type=int, default=240)
    g.add_argument("--aux-hue-shift", type=float, default=0.0)
    g.add_argument("--aux-shapes", default="", help="comma list, e.g. disk,ring")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="train methods over seeds and summarize")
    r.add_argument("--config", help="key = value file; flags override it")
    for key in _RUN_KEYS:
        r.add_argument(f"--{key.replace('_', '-')}", dest=key)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fuse", help="fuse two pseudo-label maps")
    f.add_argument("--old-labels", required=True)
    f.add_argument("--old-conf", required=True)
    f.add_argument("--new-labels", required=True)
    f.add_argument("--new-conf", required=True)
    f.add_argument("--mode", choices=["naive", "cr"], default="cr")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    d = sub.add_parser("fd", help="Fréchet distance between two PPM directories")
    d.add_argument("dir_a")
    d.add_argument("dir_b")
    d.set_defaults(func=cmd_fd)

    e = sub.add_parser("eval", help="score a checkpoint on labeled scenes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="directory of scene_*.ppm + .labels.txt")
    e.add_argument("--csv", help="also write a per-class CSV here")
    e.add_argument("--exclude-background", action="store_true")
    e.set_defaults(func=cmd_eval)
    return top


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        ContractViolation,
        ConfigError,
        CheckpointError,
        GenerationExhausted,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
