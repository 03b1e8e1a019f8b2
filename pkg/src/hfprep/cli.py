"""``hfprep`` command line: preprocess, label, train, predict, evaluate, rdplot, split.

Exit status 0 on success, 1 on runtime failure (one ``hfprep: error: ...``
line on stderr), 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, load_config, load_manifest, split_manifest, validate,
                     write_manifest)
from .filters import GaussianSpec, UnsharpMask
from .frame_io import Layout, load_video, write_y4m
from .labeler import curves_from_audit, pseudo_label_dataset, quality_at_bitrate
from .metrics import plcc, rmse
from .model import Ffpn, TrainItem, predict_video, sampler_meta, train
from .sampling import derive_seed

log = logging.getLogger("hfprep")


def _raw_args(args):
    if not args.raw:
        return None
    if not args.size:
        raise SystemExit("hfprep: error: --raw needs --size WxH")
    w, h = (int(v) for v in args.size.lower().split("x"))
    num, _, den = args.fps.partition("/")
    return {"width": w, "height": h, "layout": Layout(args.pix.upper()),
            "fps": (int(num), int(den or 1))}


def _add_raw(p):
    p.add_argument("--raw", action="store_true", help="input is headerless planar YUV")
    p.add_argument("--size", help="raw frame size WxH")
    p.add_argument("--pix", default="YUV420", help="raw layout: YUV420, YUV444 or GRAY")
    p.add_argument("--fps", default="30/1", help="raw frame rate N/D")


def build_parser():
    ap = argparse.ArgumentParser(prog="hfprep", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--log", help="append a JSON run record to this file")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("preprocess", help="apply unsharp masking of a given strength")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--ksize", type=int)
    p.add_argument("--boundary", choices=["reflect", "wrap"])
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    _add_raw(p)

    p = sub.add_parser("label", help="pseudo-label videos by RD sweep")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True, help="output labels CSV")
    p.add_argument("--audit", help="output RD audit CSV (default: <labels>.audit.csv)")
    p.add_argument("--encoder-cmd")
    p.add_argument("--decode-cmd")
    p.add_argument("--metric", help="'builtin' or a command template with {image}")
    p.add_argument("--workdir")
    p.add_argument("--workers", type=int)
    p.add_argument("--target", type=float, help="target bitrate in kbps")

    p = sub.add_parser("train", help="train the strength predictor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", help="labels CSV overriding the manifest's alpha_label")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("predict", help="predict the preprocessing strength")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("-i", "--input")
    src.add_argument("--manifest")
    p.add_argument("--out", help="predictions CSV (with --manifest)")
    p.add_argument("--clips", type=int)
    p.add_argument("--seed", type=int)
    _add_raw(p)

    p = sub.add_parser("evaluate", help="PLCC and RMSE of predictions against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)

    p = sub.add_parser("rdplot", help="per-video RD curves as CSV")
    p.add_argument("--audit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=float)

    p = sub.add_parser("split", help="seeded train/test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    return ap


# -- subcommands ------------------------------------------------------------


def cmd_preprocess(args, cfg, record):
    spec = cfg.gaussian
    over = {k: getattr(args, k) for k in ("sigma", "ksize", "boundary") if getattr(args, k) is not None}
    if over:
        spec = dataclasses.replace(spec, **over)
    video = load_video(args.input, _raw_args(args))
    write_y4m(UnsharpMask(spec).video(video, args.alpha), args.output)
    record["gaussian"] = spec.to_dict()
    return 0


def cmd_label(args, cfg, record):
    over = {}
    if args.encoder_cmd:
        over["encoder_cmd"] = args.encoder_cmd
    if args.decode_cmd:
        over["decode_cmd"] = args.decode_cmd
    if args.metric:
        over["metric_cmd"] = args.metric
    if args.workdir:
        over["workdir"] = args.workdir
    if args.target is not None:
        over["target_kbps"] = args.target
    spec = dataclasses.replace(cfg.label, **over) if over else cfg.label
    entries = load_manifest(args.manifest)
    audit = args.audit or str(Path(args.labels).with_suffix("")) + ".audit.csv"
    run = pseudo_label_dataset([(e.video_id, e.path) for e in entries], spec, args.labels, audit,
                               workers=args.workers or cfg.workers)
    record.update(labelled=len(run.labels), failures=run.failures, audit=audit)
    if run.failures:
        for vid, msg in run.failures:
            print(f"hfprep: failed video {vid}: {msg}", file=sys.stderr)
        print(f"hfprep: error: {len(run.failures)} of {len(entries)} videos failed to label",
              file=sys.stderr)
        return 1
    return 0


def cmd_train(args, cfg, record):
    sched = cfg.train
    if args.epochs is not None:
        sched = dataclasses.replace(sched, epochs=args.epochs)
    if args.batch is not None:
        sched = dataclasses.replace(sched, batch=args.batch)
    seed = cfg.seed if args.seed is None else args.seed
    entries = load_manifest(args.manifest, labels=args.labels)
    items = [TrainItem(e.video_id, load_video(e.path), e.alpha_label) for e in entries]
    record["seed"] = seed
    res = train(items, schedule=sched, sampler=cfg.sampler, mask_spec=cfg.mask_spec, seed=seed,
                model_cfg=cfg.model, on_epoch=lambda r: log.info("epoch %(epoch)d loss %(loss).5f", r))
    res.model.save(args.out, meta={"sampler": sampler_meta(cfg.sampler),
                                   "mask": [cfg.mask_spec.sigma, cfg.mask_spec.ksize,
                                            float(cfg.mask_spec.boundary == "wrap")],
                                   "best_epoch": res.best_epoch, "best_loss": res.best_loss,
                                   "steps": res.steps})
    record.update(history=res.history, best_loss=res.best_loss, best_epoch=res.best_epoch)
    return 0


def _mask_from_meta(model, default):
    m = getattr(model, "meta", {}).get("mask")
    if m is None:
        return default
    return GaussianSpec(float(m[0]), int(m[1]), "wrap" if m[2] else "reflect")


def cmd_predict(args, cfg, record):
    model = Ffpn.load(args.model)
    clips = args.clips or cfg.clips
    seed = cfg.seed if args.seed is None else args.seed
    mask = _mask_from_meta(model, cfg.mask_spec)
    record["seed"] = seed
    if args.input:
        pred = predict_video(load_video(args.input, _raw_args(args)), model, clips, seed, mask_spec=mask)
        print(f"s_pred={pred.s_pred!r}")
        record["s_pred"] = pred.s_pred
        return 0
    rows = []
    for e in load_manifest(args.manifest):
        pred = predict_video(load_video(e.path), model, clips, derive_seed(seed, e.video_id), mask_spec=mask)
        rows.append([e.video_id, repr(pred.s_pred)])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["video_id", "s_pred"])
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _read_scores(path, columns):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: no rows")
    col = next((c for c in columns if c in rows[0]), None)
    if col is None:
        raise ValueError(f"{path}: none of the columns {columns} present")
    return {r["video_id"]: float(r[col]) for r in rows if r[col] != ""}


def cmd_evaluate(args, cfg, record):
    pred = _read_scores(args.pred, ["s_pred", "alpha", "alpha_label"])
    gt = _read_scores(args.gt, ["alpha_label", "alpha"])
    ids = [v for v in gt if v in pred]
    if len(ids) < 2:
        raise ValueError(f"only {len(ids)} videos in common between predictions and labels")
    p, g = [pred[v] for v in ids], [gt[v] for v in ids]
    r, e = plcc(p, g), rmse(p, g)
    print(f"plcc={r:.6f} rmse={e:.6f}")
    record.update(plcc=r, rmse=e, n=len(ids))
    return 0


def cmd_rdplot(args, cfg, record):
    with open(args.audit, newline="") as f:
        curves = curves_from_audit(csv.DictReader(f))
    target = cfg.label.target_kbps if args.target is None else args.target
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["video_id", "alpha", "measured_kbps", "quality", "quality_at_target", "target_kbps"])
        for vid, by_alpha in curves.items():
            for a in sorted(by_alpha):
                c = by_alpha[a]
                qt = quality_at_bitrate(c, target)
                for pt in c.points:
                    w.writerow([vid, repr(a), repr(pt.measured_kbps), repr(pt.quality), repr(qt), repr(target)])
    return 0


def cmd_split(args, cfg, record):
    seed = cfg.seed if args.seed is None else args.seed
    entries = load_manifest(args.manifest, check_paths=False)
    tr, te = split_manifest(entries, args.train_fraction, seed)
    write_manifest(tr, args.train_out)
    write_manifest(te, args.test_out)
    print(f"train={len(tr)} test={len(te)}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "label": cmd_label,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "rdplot": cmd_rdplot,
    "split": cmd_split,
}


def _log_path(args, cfg):
    if args.log:
        return Path(args.log)
    if cfg.log_path:
        return Path(cfg.log_path)
    return Path(os.environ.get("HFPREP_WORKDIR") or cfg.label.workdir) / "logs" / "runs.jsonl"


def run_pipeline(command, argv, config=None, log=None):
    """Parse ``argv`` for ``command`` and run it; returns the exit status."""
    head = (["--config", str(config)] if config else []) + (["--log", str(log)] if log else [])
    return main([*head, command, *argv])


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    record = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
              "versions": {"hfprep": __version__, "numpy": np.__version__,
                           "python": platform.python_version()}}
    cfg = None
    try:
        cfg = validate(load_config(args.config))
        record["config"] = cfg.to_dict()
        status = COMMANDS[args.command](args, cfg, record)
    except (ConfigError, ValueError, OSError, RuntimeError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"hfprep: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        record["error"] = f"{type(exc).__name__}: {msg}"
        status = 1
    record.update(status=status, seconds=round(time.time() - t0, 3))
    if cfg is not None:
        try:
            path = _log_path(args, cfg)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a") as f:
                f.write(json.dumps(record, default=str) + "\n")
        except OSError as exc:
            print(f"hfprep: warning: run log not written: {exc}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
