"""Command line entry point: train, featviz-baseline, evaluate, verify-theory, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from faithbench import featviz, harness, theory
from faithbench.data import load_idx
from faithbench.models import MLPModel, TrainConfig, evaluate_classifier, load_model, save_model, train_sgd

log = logging.getLogger("faithbench")


def _cmd_train(args) -> int:
    images, labels = load_idx(args.train_images), load_idx(args.train_labels)
    d = int(np.prod(images.shape[1:]))
    sizes = [d, *args.hidden, int(labels.max()) + 1]
    cfg = TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed
    )
    result = train_sgd(sizes, images, labels, cfg)
    save_model(result.model, args.out)
    print(f"train accuracy {result.accuracy:.4f}  loss {result.loss:.4f}")
    if args.test_images and args.test_labels:
        acc, loss = evaluate_classifier(result.model, load_idx(args.test_images), load_idx(args.test_labels))
        print(f"test accuracy  {acc:.4f}  loss {loss:.4f}")
    print(f"model written to {args.out}")
    return 0


def _cmd_featviz(args) -> int:
    model = load_model(args.model)
    if not isinstance(model, MLPModel):
        print("featviz needs an MLP model", file=sys.stderr)
        return 2
    r = featviz.mean_magnitude_spectrum(load_idx(args.train_images))
    cfg = featviz.FeatVizConfig(
        max_steps=args.steps, learning_rate=args.lr, threshold=args.threshold, seed=args.seed
    )
    result = featviz.optimize_baseline(model, r, cfg)
    featviz.export_baseline(result, args.out, args.pgm)
    print(
        f"objective {result.trace[0]:.6g} -> {result.final_objective:.6g} "
        f"in {len(result.trace) - 1} steps; clip fraction {result.clip_fraction:.3f}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    cfg = harness.RunConfig.from_json(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.images is not None:
        cfg.image_count = args.images
    out = Path(cfg.output_dir)
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    result = harness.run_benchmark(cfg, trace_dir=traces)
    harness.save_result(result, out / "run.json")
    written = harness.emit_report(result, out)
    print(f"{len(result.records)} grid cells; wrote run.json and {len(written)} report files to {out}")
    return 0


def _cmd_report(args) -> int:
    result = harness.load_result(args.run)
    out = Path(args.out) if args.out else Path(args.run).parent
    for path in harness.emit_report(result, out):
        print(path)
    return 0


def _cmd_verify_theory(args) -> int:
    dims = tuple(args.dims)
    reports = list(theory.check_baseline_dependence(args.count, dims, args.seed).values())
    reports.append(theory.check_corollary_insertion(args.count, dims, args.seed))
    width = max(len(r.name) for r in reports)
    ok = True
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        notes = " ".join(f"{k}={v}" for k, v in r.notes.items())
        print(f"{r.name:<{width}}  {status}  checked={r.checked} failures={len(r.failures)} {notes}".rstrip())
        for line in r.failures[: args.show]:
            print(f"    {line}")
        ok &= r.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faithbench", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an MLP classifier on IDX data")
    t.add_argument("--train-images", required=True)
    t.add_argument("--train-labels", required=True)
    t.add_argument("--test-images")
    t.add_argument("--test-labels")
    t.add_argument("--hidden", type=int, nargs="*", default=[128])
    t.add_argument("--epochs", type=int, default=3)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="model JSON path")
    t.set_defaults(func=_cmd_train)

    f = sub.add_parser("featviz-baseline", help="optimize the phase-only featviz baseline")
    f.add_argument("--model", required=True)
    f.add_argument("--train-images", required=True)
    f.add_argument("--steps", type=int, default=512)
    f.add_argument("--lr", type=float, default=0.05)
    f.add_argument("--threshold", type=float, default=1e-6)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="JSON tensor path")
    f.add_argument("--pgm", help="optional PGM image path")
    f.set_defaults(func=_cmd_featviz)

    e = sub.add_parser("evaluate", help="run the image x method x baseline grid")
    e.add_argument("--config", required=True, help="RunConfig JSON")
    e.add_argument("--output-dir", help="override cfg.output_dir")
    e.add_argument("--images", type=int, help="override cfg.image_count")
    e.set_defaults(func=_cmd_evaluate)

    v = sub.add_parser("verify-theory", help="brute-force checks of the linear-model ordering results")
    v.add_argument("--count", type=int, default=100)
    v.add_argument("--dims", type=int, nargs="+", default=[3, 4, 5])
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--show", type=int, default=3, help="failing instances to print per check")
    v.set_defaults(func=_cmd_verify_theory)

    r = sub.add_parser("report", help="rebuild report CSVs from a run.json")
    r.add_argument("--run", required=True)
    r.add_argument("--out")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError, harness.BenchmarkError, featviz.FeatVizError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
