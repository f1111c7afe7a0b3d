"""Command-line entry point: ``glnet {synth,train,infer,eval,gradcheck}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import gradcheck, tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (ensure_writable_dir, load_dataset, read_pgm_u8, read_ppm, resize_bilinear, resize_image,
                   scan_dataset, synth_dataset, write_dataset, write_pgm)
from .metrics import MapPair, MetricConfig, evaluate
from .model import GLNet, ModelConfig
from .train import NonFiniteLoss, TrainConfig, predict_group, train, write_loss_log

log = logging.getLogger("glnet")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flags, config or input files (exit 2)."""


# -- run config -------------------------------------------------------------------
@dataclass
class RunConfig:
    """JSON run document: ``{"model": {...}, "train": {...}, "seed": int, "paths": {...}}``."""
    model: ModelConfig
    train: TrainConfig
    seed: int = 0
    paths: dict = field(default_factory=dict)

    PATH_KEYS = ("data", "out", "log")

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(doc) - {"model", "train", "seed", "paths"}
        if unknown:
            raise UsageError(f"unknown config key: {sorted(unknown)[0]}")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise UsageError("config key 'seed' must be an integer")
        paths = doc.get("paths", {})
        bad = set(paths) - set(cls.PATH_KEYS)
        if bad:
            raise UsageError(f"unknown config key: paths.{sorted(bad)[0]}")
        sections = {}
        for name, klass in (("model", ModelConfig), ("train", TrainConfig)):
            section = dict(doc.get(name, {}))
            known = klass.__dataclass_fields__
            for key in section:
                if key not in known:
                    raise UsageError(f"unknown config key: {name}.{key}")
                expected = type(known[key].default)
                value = section[key]
                if expected is float and isinstance(value, int) and not isinstance(value, bool):
                    section[key] = value = float(value)
                if type(value) is not expected:
                    raise UsageError(f"config key {name}.{key} must be {expected.__name__}, got {value!r}")
            section.setdefault("seed", seed)
            try:
                sections[name] = klass(**section)
            except ValueError as exc:
                raise UsageError(f"invalid {name} config: {exc}") from exc
        return cls(sections["model"], sections["train"], seed, dict(paths))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_json(doc)


# -- commands -------------------------------------------------------------------------
def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} is not empty")
    try:
        ensure_writable_dir(out)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    groups = synth_dataset(args.seed, args.groups, args.group_size, args.side)
    write_dataset(out, groups)
    print(f"groups: {len(groups)}")
    for g in groups:
        print(f"{g.name}: {g.category[0]} {g.category[1]} ({len(g)} images)")
    return EXIT_OK


def cmd_train(args) -> int:
    run = RunConfig.load(args.config) if args.config else RunConfig(ModelConfig(), TrainConfig())
    data_dir = args.data or run.paths.get("data")
    out = args.out or run.paths.get("out")
    if not data_dir or not out:
        raise UsageError("--data and --out are required (flags or config paths)")
    out = Path(out)
    log_path = Path(args.log or run.paths.get("log") or out.with_suffix(".loss.csv"))
    for p in (out, log_path):
        if not p.parent.exists():
            raise UsageError(f"directory {p.parent} does not exist")
    try:
        data = load_dataset(data_dir, side=run.model.image_size)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read dataset: {exc}") from exc
    model = GLNet(run.model)
    if args.inject_fault == "nan":
        # test hook: poison one weight so the first loss is NaN
        model.decoder.head.bias.data[:] = np.nan
    rows: List = []
    try:
        train(model, data, run.train, callback=rows.append)
    except NonFiniteLoss as exc:
        write_loss_log(log_path, rows)
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_loss_log(log_path, rows)
    save_checkpoint(model, out, iteration=run.train.iterations)
    print(f"checkpoint {out} final_loss {rows[-1].loss:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    try:
        model = load_checkpoint(ckpt)
    except CheckpointError as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from exc
    try:
        groups = scan_dataset(args.data, require_gt=False)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read dataset: {exc}") from exc
    out = Path(args.out)
    if out.resolve() == Path(args.data).resolve():
        raise UsageError("output directory must differ from the input directory")
    ensure_writable_dir(out)
    side = model.config.image_size
    count = 0
    for name, items in groups.items():
        originals = [read_ppm(it.image_path) for it in items]
        images = np.stack([resize_image(im, side) for im in originals])
        maps = predict_group(model, images)
        gdir = out / name
        gdir.mkdir(exist_ok=True)
        for it, im, m in zip(items, originals, maps):
            full = np.clip(resize_bilinear(m[0], *im.shape[1:]), 0.0, 1.0)
            write_pgm(gdir / f"{it.image_id}.pgm", full)
            count += 1
    print(f"wrote {count} maps to {out}")
    return EXIT_OK


def collect_pairs(pred_dir, gt_dir):
    """Match ``<group>/<id>.pgm`` predictions with ``<group>/<id>_gt.pgm`` masks."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"directory {d} does not exist")
    gts = {p.relative_to(gt_dir).with_name(p.name[:-len("_gt.pgm")]): p
           for p in gt_dir.rglob("*_gt.pgm")}
    preds = {p.relative_to(pred_dir).with_suffix(""): p
             for p in pred_dir.rglob("*.pgm") if not p.name.endswith("_gt.pgm")}
    for key in sorted(set(gts) | set(preds)):
        if key not in preds:
            raise UsageError(f"no prediction for {gts[key]}")
        if key not in gts:
            raise UsageError(f"no ground truth for {preds[key]}")
    if not gts:
        raise UsageError(f"no ground-truth files under {gt_dir}")
    pairs, labels = [], []
    cfg = MetricConfig()
    for key in sorted(gts):
        gt = read_pgm_u8(gts[key]) >= cfg.gt_binarize_level
        pred = read_pgm_u8(preds[key]).astype(np.float64) / 255.0
        if pred.shape != gt.shape:
            pred = np.clip(resize_bilinear(pred, *gt.shape), 0.0, 1.0).astype(np.float64)
        pairs.append(MapPair.make(pred, gt))
        labels.append(str(key.parent))
    return pairs, labels


def cmd_eval(args) -> int:
    pairs, labels = collect_pairs(args.pred, args.gt)
    try:
        report = evaluate(pairs, groups=labels if args.per_group else None)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.pr:
        with open(args.pr, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in report.pr_rows():
                w.writerow([t, f"{p:.6f}", f"{r:.6f}"])
    d = report.to_dict()
    print(" ".join(f"{k}={d[k]:.6f}" for k in ("max_f", "s", "max_e", "mae")))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = args.modules or list(gradcheck.CASES)
    unknown = [n for n in names if n not in gradcheck.CASES]
    if unknown:
        raise UsageError(f"unknown module {unknown[0]!r}; choose from {', '.join(gradcheck.CASES)}")
    if args.inject_fault == "grad":
        tensor.set_leaf_grad_scale(1.01)
    try:
        results = gradcheck.run_suite(args.seed, names, tolerance=args.tolerance)
    finally:
        tensor.set_leaf_grad_scale(1.0)
    width = max(len(r.name) for r in results)
    print(f"{'module':<{width}}  max_rel_error  status")
    for r in results:
        print(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {'PASS' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in results)
    print("all passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


# -- parser -------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glnet", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, the deterministic setting)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--inject-fault", choices=["grad", "nan"], help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic co-saliency dataset")
    s.add_argument("--out", required=True, help="output directory (created; must be empty)")
    s.add_argument("--groups", type=_positive, default=10, help="number of groups")
    s.add_argument("--group-size", type=_at_least_two, default=5, help="images per group")
    s.add_argument("--side", type=_positive, default=160, help="image side in pixels")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", help="training dataset directory")
    t.add_argument("--config", help="JSON run config (model, train, seed, paths)")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="loss CSV path (default: <out>.loss.csv)")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="predict co-saliency maps for every group")
    i.add_argument("--ckpt", required=True, help="checkpoint path")
    i.add_argument("--data", required=True, help="dataset directory (ground truth optional)")
    i.add_argument("--out", required=True, help="prediction directory (<group>/<id>.pgm)")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True, help="prediction directory")
    e.add_argument("--gt", required=True, help="ground-truth dataset directory")
    e.add_argument("--out", required=True, help="JSON report path")
    e.add_argument("--pr", help="PR curve CSV path")
    e.add_argument("--per-group", action="store_true", help="add a per-group table to the report")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every module")
    g.add_argument("--seed", type=int, default=0, help="seed for toy shapes and probes")
    g.add_argument("--modules", nargs="+", metavar="NAME", help=f"subset of: {', '.join(gradcheck.CASES)}")
    g.add_argument("--tolerance", type=float, default=1e-3, help="max relative error (default 1e-3)")
    g.set_defaults(fn=cmd_gradcheck)
    return p


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _at_least_two(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError("must be >= 2")
    return v


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
