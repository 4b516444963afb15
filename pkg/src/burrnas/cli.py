"""Command-line entry point: ``burrnas {gen,unwrap,search,train,detect,eval,report}``.

Every option can also come from a TOML config file (``--config``), one table
per command, e.g.::

    [search]
    evaluator = "surrogate"
    T = 2
    trials = 240

Precedence is built-in default < config file < command-line flag.
``--print-config`` prints the effective settings in the same format and
exits, so its output can be fed back through ``--config``.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

import tomli

from . import __version__
from .archspace import decode, encode
from .childeval import (
    ExternalEvaluator,
    Head,
    MicroDetConfig,
    MicroDetEvaluator,
    SurrogateEvaluator,
    build_pyramid,
    detect,
    gt_boxes,
    train_microdet,
)
from .controller import SearchConfig, run_search
from .detectmetrics import EvalConfig, mean_ap, per_threshold_ap, read_detections, write_detections
from .errors import BurrNasError, IoError
from .geometry import Circle, Point2
from .pipeline import UnwrapConfig, augment_flip, unwrap_dataset
from .report import PUBLISHED_GRID, render_grid_svg, render_progress_svg, render_table
from .synthdata import DEFAULT_SIZES, DOMAIN_PRESETS, SplitRatios, generate_domain, read_manifest, split_1_2_1, write_manifest

log = logging.getLogger("burrnas")

# (name, type, default, help) per command; names double as config keys
OPTIONS = {
    "gen": [
        ("domains", str, "A,B,C,D", "comma-separated domain presets"),
        ("n", int, 0, "samples per domain; 0 uses the preset sizes (A=402, B=396, C=50, D=76)"),
        ("seed", int, 0, "base seed; domain i uses seeds seed + 100000*i + k"),
        ("out", str, "data", "output directory; one subdirectory per domain"),
    ],
    "unwrap": [
        ("dataset", str, "", "input dataset directory or manifest"),
        ("out", str, "", "output directory for the polar dataset"),
        ("center", str, "", "'x,y,r' border circle; skips RANSAC when given"),
        ("out_height", int, 200, "radial bins of the polar image"),
        ("out_width", int, 333, "angular bins of the polar image"),
        ("r_min_frac", float, 0.3, "inner annulus radius as a fraction of the border radius"),
        ("r_max_frac", float, 0.9, "outer annulus radius as a fraction of the border radius"),
        ("seed", int, 0, "RANSAC seed"),
    ],
    "search": [
        ("dataset", str, "", "polar dataset (needed by the microdet evaluator)"),
        ("evaluator", str, "surrogate", "surrogate | microdet | external"),
        ("external_cmd", str, "", "command line of the external evaluator process"),
        ("timeout", float, 600.0, "seconds to wait for each external reply"),
        ("T", int, 7, "blocks per architecture"),
        ("trials", int, 500, "controller trials"),
        ("lr", float, 0.1, "controller learning rate"),
        ("child_iters", int, 3000, "training iterations per child network"),
        ("hidden", int, 32, "controller hidden size"),
        ("split_seed", int, 0, "seed of the 1:2:1 nas/train/eval split"),
        ("seed", int, 0, "controller seed"),
        ("out", str, "search", "output directory"),
    ],
    "train": [
        ("dataset", str, "", "polar dataset"),
        ("arch", str, "", "architecture encoding or a file containing one"),
        ("subset", str, "train", "all | nas | train | eval"),
        ("split_seed", int, 0, "seed of the 1:2:1 split"),
        ("iters", int, 300, "SGD steps"),
        ("lr", float, MicroDetConfig.train_lr, "SGD learning rate"),
        ("flip", bool, True, "add left-right flipped copies"),
        ("seed", int, 0, "training seed"),
        ("out", str, "head.json", "output head file"),
    ],
    "detect": [
        ("dataset", str, "", "polar dataset"),
        ("arch", str, "", "architecture encoding or a file containing one"),
        ("head", str, "head.json", "trained head file"),
        ("subset", str, "all", "all | nas | train | eval"),
        ("split_seed", int, 0, "seed of the 1:2:1 split"),
        ("threshold", float, MicroDetConfig.det_threshold, "objectness threshold for box extraction"),
        ("seed", int, 0, "unused; accepted for uniformity"),
        ("out", str, "detections.json", "output detections file"),
    ],
    "eval": [
        ("dataset", str, "", "polar dataset with ground truth"),
        ("detections", str, "detections.json", "detections file"),
        ("subset", str, "all", "all | nas | train | eval"),
        ("split_seed", int, 0, "seed of the 1:2:1 split"),
        ("seed", int, 0, "unused; accepted for uniformity"),
        ("out", str, "eval.json", "output metrics file"),
    ],
    "report": [
        ("grid", str, "published", "grid JSON {method: {train: {test: mAP}}} or 'published'"),
        ("methods", str, "", "comma-separated row order; empty keeps file order"),
        ("seed", int, 0, "unused; accepted for uniformity"),
        ("out", str, "report", "output directory"),
    ],
}


def _parse_bool(text: str) -> bool:
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="burrnas", description="Burr detection with architecture search.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd, help=COMMANDS[cmd].__doc__.splitlines()[0])
        p.add_argument("--config", help="TOML config file with a [%s] table" % cmd)
        p.add_argument("--print-config", action="store_true", help="print effective settings and exit")
        for name, typ, default, text in opts:
            flag = "--" + name.replace("_", "-")
            conv = _parse_bool if typ is bool else typ
            p.add_argument(flag, dest=name, type=conv, default=None, help=f"{text} (default: {default!r})")
    return parser


def resolve_config(cmd: str, args: argparse.Namespace) -> dict:
    conf = {name: default for name, _, default, _ in OPTIONS[cmd]}
    types = {name: typ for name, typ, _, _ in OPTIONS[cmd]}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                doc = tomli.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except tomli.TOMLDecodeError as exc:
            raise BurrNasError(f"config {args.config}: {exc}") from exc
        table = doc.get(cmd, {})
        for key, value in table.items():
            if key not in conf:
                raise BurrNasError(f"config {args.config}: unknown key {key!r} in [{cmd}]")
            conf[key] = _parse_bool(value) if types[key] is bool else types[key](value)
    for name in conf:
        value = getattr(args, name, None)
        if value is not None:
            conf[name] = value
    return conf


def format_config(cmd: str, conf: dict) -> str:
    lines = [f"[{cmd}]"]
    for name, typ, _, _ in OPTIONS[cmd]:
        v = conf[name]
        if typ is bool:
            text = "true" if v else "false"
        elif typ is str:
            text = json.dumps(v)
        else:
            text = repr(v)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


def _mkdir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return path


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc


def _need(conf: dict, key: str, cmd: str) -> str:
    if not conf[key]:
        raise BurrNasError(f"{cmd}: --{key.replace('_', '-')} is required")
    return conf[key]


def _load_arch(text: str):
    path = Path(text)
    if path.is_file():
        text = path.read_text(encoding="utf-8").strip()
    return decode(text)


def _select(ds, subset: str, split_seed: int):
    if subset == "all":
        return list(ds.samples)
    names = ("nas", "train", "eval")
    if subset not in names:
        raise BurrNasError(f"unknown subset {subset!r}; expected all, nas, train or eval")
    parts = split_1_2_1(ds, SplitRatios(), split_seed)
    return list(parts[names.index(subset)].samples)


# --------------------------------------------------------------------------
# commands


def cmd_gen(conf: dict) -> int:
    """Render synthetic domains, one dataset directory each."""
    out = _mkdir(conf["out"])
    domains = [d.strip() for d in conf["domains"].split(",") if d.strip()]
    for i, name in enumerate(domains):
        if name not in DOMAIN_PRESETS:
            raise BurrNasError(f"unknown domain {name!r}; presets are {', '.join(DOMAIN_PRESETS)}")
        n = conf["n"] or DEFAULT_SIZES[name]
        ds = generate_domain(DOMAIN_PRESETS[name], n, conf["seed"] + 100000 * i, out_dir=_mkdir(out / name))
        log.info("domain %s: %d samples -> %s", name, len(ds), ds.manifest_path)
    return 0


def cmd_unwrap(conf: dict) -> int:
    """Fit the border circle, unwrap to polar coordinates and transform annotations."""
    ds = read_manifest(_need(conf, "dataset", "unwrap"))
    if len(ds) == 0:
        raise BurrNasError(f"dataset {conf['dataset']} is empty")
    ucfg = UnwrapConfig(out_height=conf["out_height"], out_width=conf["out_width"],
                        r_min_frac=conf["r_min_frac"], r_max_frac=conf["r_max_frac"])
    circle = None
    if conf["center"]:
        try:
            x, y, r = (float(v) for v in conf["center"].split(","))
        except ValueError:
            raise BurrNasError(f"--center expects 'x,y,r', got {conf['center']!r}") from None
        circle = Circle(Point2(x, y), r)
    polar, audit = unwrap_dataset(ds, ucfg, circle, conf["seed"])
    if audit["skipped"]:
        log.warning("%d image(s) skipped: no circle model", len(audit["skipped"]))
    if len(polar) == 0:
        raise BurrNasError("no image could be unwrapped")
    out = _mkdir(_need(conf, "out", "unwrap"))
    write_manifest(polar, out / "manifest.json")
    log.info("fill rate %.3f -> %.3f over %d burrs", audit["fill_rate_before"] or 0, audit["fill_rate_after"] or 0,
             audit["n_burrs"])
    return 0


def cmd_search(conf: dict) -> int:
    """Run the controller search and write the log, best architecture and progress plot."""
    cfg = SearchConfig(T=conf["T"], trials=conf["trials"], lr=conf["lr"], child_iters=conf["child_iters"],
                       seed=conf["seed"], hidden=conf["hidden"])
    kind = conf["evaluator"]
    closer = None
    if kind == "surrogate":
        evaluator = SurrogateEvaluator()
    elif kind == "microdet":
        ds = read_manifest(_need(conf, "dataset", "search"))
        nas, train, _ = split_1_2_1(ds, SplitRatios(), conf["split_seed"])
        if len(nas) == 0 or len(train) == 0:
            raise BurrNasError(f"dataset of {len(ds)} images is too small for a 1:2:1 split")
        evaluator = MicroDetEvaluator(augment_flip(train.samples), augment_flip(nas.samples),
                                      MicroDetConfig(train_iters=cfg.child_iters), seed=conf["seed"])
    elif kind == "external":
        evaluator = ExternalEvaluator(shlex.split(_need(conf, "external_cmd", "search")), cfg.child_iters,
                                      conf["timeout"])
        closer = evaluator.close
    else:
        raise BurrNasError(f"unknown evaluator {kind!r}")
    try:
        slog = run_search(cfg, evaluator,
                          progress=lambda e: log.debug("trial %d %s R=%.4f b=%.4f", e.trial, e.arch, e.reward,
                                                       e.baseline))
    finally:
        if closer:
            closer()
    out = _mkdir(conf["out"])
    _write_text(out / "search_log.txt", slog.to_text())
    best = slog.best
    _write_text(out / "best_arch.txt", best.arch + "\n")
    _write_text(out / "progress.svg", render_progress_svg(slog.rewards, [e.baseline for e in slog.entries],
                                                          [e.best_so_far for e in slog.entries]))
    summary = {
        "trials": len(slog.entries),
        "best_arch": best.arch,
        "best_reward": best.reward,
        "best_trial": best.trial,
        "cumulative_child_iters": slog.cumulative_child_iters,
        "converged_at_trial": slog.converged_at(),
    }
    _write_text(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    log.info("best %s reward %.4f (trial %d)", best.arch, best.reward, best.trial)
    return 0


def cmd_train(conf: dict) -> int:
    """Fit the micro-detector head for one architecture."""
    ds = read_manifest(_need(conf, "dataset", "train"))
    arch = _load_arch(_need(conf, "arch", "train"))
    samples = _select(ds, conf["subset"], conf["split_seed"])
    if conf["flip"]:
        samples = augment_flip(samples)
    cfg = MicroDetConfig(train_iters=conf["iters"], train_lr=conf["lr"])
    head = train_microdet(arch, cfg, samples, conf["seed"])
    doc = {"arch": encode(arch), **head.to_json()}
    _write_text(conf["out"], json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_detect(conf: dict) -> int:
    """Write detections (all confidences) for every image of a dataset."""
    ds = read_manifest(_need(conf, "dataset", "detect"))
    head_path = Path(conf["head"])
    try:
        head_doc = json.loads(head_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read head file {head_path}: {exc.strerror}") from exc
    arch = _load_arch(conf["arch"]) if conf["arch"] else decode(head_doc["arch"])
    head = Head.from_json(head_doc)
    cfg = MicroDetConfig(det_threshold=conf["threshold"])
    dets = {s.id: detect(arch, head, s.image, cfg, build_pyramid(s.image))
            for s in _select(ds, conf["subset"], conf["split_seed"])}
    write_detections(conf["out"], dets)
    return 0


def cmd_eval(conf: dict) -> int:
    """mAP@[.5:.95] of a detections file against dataset ground truth."""
    ds = read_manifest(_need(conf, "dataset", "eval"))
    found = read_detections(conf["detections"])
    samples = _select(ds, conf["subset"], conf["split_seed"])
    dets = [found.get(s.id, []) for s in samples]
    gts = [gt_boxes(s) for s in samples]
    ecfg = EvalConfig()
    doc = {
        "domain": ds.domain,
        "images": len(samples),
        "map": mean_ap(dets, gts, ecfg),
        "iou_thresholds": list(ecfg.iou_thresholds),
        "per_threshold_ap": per_threshold_ap(dets, gts, ecfg),
    }
    _write_text(conf["out"], json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_report(conf: dict) -> int:
    """Render the AP grid as a text table and a grouped bar chart."""
    if conf["grid"] == "published":
        grid = PUBLISHED_GRID
    else:
        try:
            grid = json.loads(Path(conf["grid"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read grid {conf['grid']}: {exc.strerror}") from exc
    methods = [m.strip() for m in conf["methods"].split(",") if m.strip()] or None
    out = _mkdir(conf["out"])
    _write_text(out / "table.txt", render_table(grid, methods))
    _write_text(out / "report.svg", render_grid_svg(grid, methods))
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "unwrap": cmd_unwrap,
    "search": cmd_search,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = resolve_config(args.command, args)
        if args.print_config:
            sys.stdout.write(format_config(args.command, conf))
            return 0
        return COMMANDS[args.command](conf)
    except (BurrNasError, ValueError, OSError) as exc:
        print(f"burrnas {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
