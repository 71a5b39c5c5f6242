"""Command-line pipeline: simulate, extract, train, classify, evaluate, serve.

Exit codes: 0 success, 1 runtime failure (message names the failing
stage), 2 usage error (argparse prints usage).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

from . import ensemble as ens
from . import imgio, metrics, simulate
from .features import extract_features
from .server import LabelStore, make_server

__all__ = ["run", "main"]


@contextmanager
def _stage(name: str):
    """Tag exceptions with the pipeline stage they interrupted."""
    try:
        yield
    except Exception as exc:
        raise RuntimeError(f"{name}: {exc}") from exc


def _fmt9(v: float) -> str:
    return format(float(v), ".9g")


# ---------------------------------------------------------------------------
# Prediction CSV (id,label,score)
# ---------------------------------------------------------------------------

def _write_predictions(path, ids, labels, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "score"])
        for i, lab, s in zip(ids, labels, scores):
            w.writerow([str(int(i)), "+" if lab > 0 else "-", _fmt9(s)])


def _read_predictions(path):
    ids, labels, scores = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "label", "score"]:
            raise imgio.CsvFormatError(
                f"header: expected ['id', 'label', 'score'], got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise imgio.CsvFormatError(f"line {lineno}: expected 3 columns")
            ids.append(int(row[0]))
            if row[1] not in ("+", "-"):
                raise imgio.CsvFormatError(f"line {lineno}: unknown label token {row[1]!r}")
            labels.append(1 if row[1] == "+" else -1)
            scores.append(float(row[2]))
    return np.asarray(ids), np.asarray(labels), np.asarray(scores)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    with _stage("building simulation config"):
        cfg = simulate.SimConfig(
            box=args.box,
            pixel_size=args.pixel,
            n_particles=args.particles,
            n_nonparticles=args.nonparticles,
            mix=args.mix,
            snr_structural=args.snr1,
            snr_shot=args.snr2,
            butterworth_pass=args.bw_pass,
            butterworth_stop=args.bw_stop,
            ctf=simulate.CtfParams(
                voltage=args.voltage,
                defocus=args.defocus,
                cs=args.cs,
                amplitude_contrast=args.amp_contrast,
                pixel_size=args.pixel,
            ),
            seed=args.seed,
        )
    with _stage("simulating dataset"):
        stack, labels = simulate.simulate_dataset(cfg)
    with _stage("writing image stack"):
        imgio.write_stack(stack, args.out)
    with _stage("writing label table"):
        imgio.write_label_csv(labels, args.labels)
    print(f"wrote {len(stack)} images to {args.out} and labels to {args.labels}")
    return 0


def _extract_matrix(stack: imgio.ImageStack, threads: int = 1) -> np.ndarray:
    images = (stack[i] for i in range(len(stack)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(extract_features, images))
    else:
        rows = [extract_features(img) for img in images]
    return np.vstack(rows)


def cmd_extract(args) -> int:
    with _stage("reading image stack"):
        stack = imgio.read_stack(args.infile)
    with _stage("extracting features"):
        X = _extract_matrix(stack)
    ids = np.arange(len(stack))
    labels = None
    if args.labels:
        with _stage("reading label table"):
            table = imgio.read_label_csv(args.labels)
        keep = [i for i in range(len(stack)) if table.label_of(i) != 0]
        ids = np.asarray(keep)
        X = X[ids]
        labels = np.asarray([table.label_of(i) for i in keep])
    with _stage("writing feature table"):
        imgio.write_feature_csv(args.out, ids, X, labels=labels)
    print(f"wrote {len(ids)} feature rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    with _stage("reading feature table"):
        ids, X, labels = imgio.read_feature_csv(args.features)
    if labels is None:
        raise RuntimeError("training features: file has no label column")
    with _stage("building ensemble"):
        model = ens.build_ensemble(X, labels, pool_size=args.pool, seed=args.seed)
    with _stage("writing model file"):
        ens.save_model(model, args.out)
    report = model.validation_report
    print(
        f"ensemble of {len(model)} members; holdout sensitivity="
        f"{report.sensitivity:.3f} specificity={report.specificity:.3f}"
    )
    return 0


def cmd_classify(args) -> int:
    with _stage("loading model"):
        model = ens.load_model(args.model)
    with _stage("reading image stack"):
        stack = imgio.read_stack(args.infile)
    with _stage("extracting features"):
        X = _extract_matrix(stack, threads=max(1, args.threads))
    with _stage("classifying"):
        labels, scores = ens.ensemble_predict_batch(model, X)
    with _stage("writing predictions"):
        _write_predictions(args.out, np.arange(len(stack)), labels, scores)
    if args.keep:
        with _stage("writing particle stack"):
            kept = stack.data[labels > 0]
            if kept.shape[0] == 0:
                raise RuntimeError("no images classified as particles")
            imgio.write_stack(
                imgio.ImageStack(data=kept, pixel_size=stack.pixel_size), args.keep
            )
    n_pos = int((labels > 0).sum())
    print(f"classified {len(stack)} images: {n_pos} particles, {len(stack) - n_pos} non-particles")
    return 0


def cmd_evaluate(args) -> int:
    with _stage("reading predictions"):
        ids, pred, scores = _read_predictions(args.pred)
    with _stage("reading truth labels"):
        table = imgio.read_label_csv(args.truth)
    with _stage("computing metrics"):
        truth = []
        for i in ids:
            label = table.label_of(int(i))
            if label == 0:
                raise RuntimeError(f"truth table has no label for image {i}")
            truth.append(label)
        truth = np.asarray(truth)
        c = metrics.confusion(truth, pred)
        auc = None
        if (truth > 0).any() and (truth <= 0).any():
            auc = metrics.roc_auc(scores, truth)
        report = metrics.summarize(c, auc=auc)
    with _stage("writing report"):
        with open(args.report, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
            fh.write("\n")
    parts = [
        f"tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}",
        f"sensitivity={_opt(report.sensitivity)}",
        f"specificity={_opt(report.specificity)}",
        f"ppv={_opt(report.ppv)}",
        f"auc={_opt(report.auc)}",
    ]
    print(" ".join(parts))
    return 0


def _opt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_serve(args) -> int:
    with _stage("reading image stack"):
        stack = imgio.read_stack(args.stack)
    with _stage("opening label store"):
        store = LabelStore(args.labels, n_images=len(stack))
    with _stage("starting server"):
        server = make_server(
            stack, store, port=args.port, static_dir=args.static, host=args.host
        )
    host, port = server.server_address[:2]
    print(f"labeling server on http://{host}:{port}/ ({len(stack)} images)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxsieve",
        description="Classify boxed cryo-EM images into particles and non-particles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labeled synthetic stack")
    p.add_argument("--out", required=True, help="output MRC stack")
    p.add_argument("--labels", required=True, help="output label CSV")
    p.add_argument("--particles", type=int, required=True)
    p.add_argument("--nonparticles", type=int, required=True)
    p.add_argument("--mix", default="all", choices=["all", "plate", "cylinder", "sphere", "void"])
    p.add_argument("--box", type=int, default=128)
    p.add_argument("--pixel", type=float, default=2.0, help="A per pixel")
    p.add_argument("--defocus", type=float, default=2.0, help="underfocus in um")
    p.add_argument("--snr1", type=float, default=1.4, help="structural-noise SNR")
    p.add_argument("--snr2", type=float, default=0.05, help="shot-noise SNR")
    p.add_argument("--bw-pass", type=float, default=50.0, help="low-pass pass radius (A)")
    p.add_argument("--bw-stop", type=float, default=20.0, help="low-pass stop radius (A)")
    p.add_argument("--voltage", type=float, default=300.0, help="kV")
    p.add_argument("--cs", type=float, default=2.0, help="spherical aberration (mm)")
    p.add_argument("--amp-contrast", type=float, default=0.07)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="compute the feature table for a stack")
    p.add_argument("--in", dest="infile", required=True, help="input MRC stack")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--labels", help="label CSV; keeps labeled rows and adds the label column")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="build the ensemble from a labeled feature table")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--pool", type=int, default=48, help="candidate pool size (40-60 typical)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify a stack with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True, help="input MRC stack")
    p.add_argument("--out", required=True, help="output prediction CSV")
    p.add_argument("--keep", help="also write predicted particles to this MRC path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions against truth labels")
    p.add_argument("--pred", required=True, help="prediction CSV from classify")
    p.add_argument("--truth", required=True, help="truth label CSV")
    p.add_argument("--report", required=True, help="output report JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="serve a stack to the browser labeling tool")
    p.add_argument("--stack", required=True)
    p.add_argument("--labels", required=True, help="label store CSV (created if missing)")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--static", help="directory of frontend assets to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:
        print(f"boxsieve {args.command}: error in {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
