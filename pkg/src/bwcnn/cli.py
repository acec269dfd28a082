"""Operator command line: synth, train, binarize, eval, infer, bench, inspect.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 training
divergence. Every command is deterministic given its flags and inputs; bench
timing lines are measurements, not contracts.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .binarization import binarize_network
from .dataset import decode_ppm, frame_to_tensor, load_manifest, synth_generate
from .metrics import accumulate, compute_metrics, format_metric
from .model_store import (
    ModelFormatError,
    compression_report,
    load_float,
    load_packed,
    model_kind,
    save_packed,
)
from .network import canonical_network, dense_predict
from .packed import op_count_report, pack_network, packed_forward
from .training import TrainConfig, TrainingDiverged, train_loop

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

_EVAL_BATCH = 16


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_report(path, report: dict) -> None:
    """Twin report files: flat text at `path`, full JSON at `path`.json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []

    def flat(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                flat(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(value, list):
            lines.append(f"{prefix}: {json.dumps(value)}")
        else:
            lines.append(f"{prefix}: {value}")

    flat("", {k: v for k, v in report.items() if k != "predictions"})
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    Path(str(path) + ".json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _predict_batches(predict, manifest):
    preds = []
    probs = []
    for start in range(0, len(manifest), _EVAL_BATCH):
        chunk = manifest.records[start : start + _EVAL_BATCH]
        from .dataset import load_input_tensor

        x = np.stack([load_input_tensor(manifest.root, rel) for rel, _ in chunk])
        labels, p = predict(x)
        preds.extend(int(v) for v in labels)
        probs.extend(float(v) for v in p[:, 1])
    return preds, probs


def _load_model_for_inference(path):
    kind = model_kind(path)
    if kind == "float":
        params, _ = load_float(path)
        return kind, lambda x: dense_predict(params, x)
    packed, _ = load_packed(path)
    return kind, lambda x: packed_forward(packed, x)


def cmd_synth(args) -> int:
    manifest = synth_generate(args.out, args.count, args.positive_frac, args.seed)
    labels = manifest.labels()
    print(f"wrote {len(manifest)} frames to {args.out} ({int(labels.sum())} positive)")
    if labels.min() == labels.max():
        print(
            "warning: corpus contains a single class; training on it is impossible",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig(
        mode=args.mode,
        iterations=args.iterations,
        batch_size=args.batch,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    manifest = load_manifest(args.manifest, args.root)
    t0 = time.perf_counter()

    def progress(it, loss, elapsed):
        if it % max(1, args.iterations // 20) == 0 or it == 1:
            print(f"iter {it}/{args.iterations} loss {loss:.4f} ({elapsed:.1f}s)")

    checkpoints = train_loop(manifest, cfg, out_path=args.out, progress=progress)
    final = checkpoints[-1]
    print(f"trained {cfg.iterations} iterations in {time.perf_counter() - t0:.1f}s")
    print(f"float master model: {final.path}")
    if cfg.mode == "binarized":
        packed = pack_network(binarize_network(final.params))
        out = Path(args.out)
        packed_path = out.with_name(f"{out.stem}.packed{out.suffix}")
        save_packed(packed, packed_path)
        print(f"packed binarized model: {packed_path}")
    return EXIT_OK


def cmd_binarize(args) -> int:
    params, _ = load_float(args.model)
    net = binarize_network(params)
    per_layer, total = net.total_cost(params)
    for i, cost in enumerate(per_layer):
        print(f"layer {i}: reconstruction cost {cost:.6g}")
    print(f"total reconstruction cost {total:.6g}")
    save_packed(pack_network(net), args.out)
    print(f"packed binarized model: {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    t_start = time.perf_counter()
    kind, predict = _load_model_for_inference(args.model)
    manifest = load_manifest(args.manifest, args.root)
    t_loaded = time.perf_counter()
    preds, probs = _predict_batches(predict, manifest)
    t_done = time.perf_counter()
    truths = [lab for _, lab in manifest.records]
    counts = accumulate(preds, truths)
    metrics = compute_metrics(counts)
    report = {
        "command": "eval",
        "argv": sys.argv[1:] if sys.argv[1:] else ["eval"],
        "model": str(args.model),
        "model_kind": kind,
        "model_bytes": Path(args.model).stat().st_size,
        "manifest": str(args.manifest),
        "frames": len(manifest),
        "digests": {
            "model_sha256": _sha256(args.model),
            "manifest_sha256": _sha256(args.manifest),
        },
        "confusion": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
        "metrics": {k: (v if v is not None else "undefined") for k, v in metrics.items()},
        "timing_seconds": {
            "load": round(t_loaded - t_start, 4),
            "inference": round(t_done - t_loaded, 4),
            "total": round(t_done - t_start, 4),
        },
        "predictions": [
            {"path": rel, "truth": lab, "pred": pred, "prob_positive": prob}
            for (rel, lab), pred, prob in zip(manifest.records, preds, probs)
        ],
    }
    for name in ("accuracy", "dice", "recall", "precision", "specificity"):
        print(f"{name}: {format_metric(metrics[name])}")
    print(f"fppf: {format_metric(metrics['fppf'], percent=False)}")
    print(f"confusion: tp={counts.tp} fp={counts.fp} tn={counts.tn} fn={counts.fn}")
    if args.report:
        _write_report(args.report, report)
        print(f"report: {args.report} and {args.report}.json")
    return EXIT_OK


def cmd_infer(args) -> int:
    _, predict = _load_model_for_inference(args.model)
    raster = decode_ppm(Path(args.image).read_bytes())
    x = frame_to_tensor(raster)[None]
    labels, probs = predict(x)
    print(f"label: {int(labels[0])}")
    print(f"probabilities: negative={probs[0, 0]:.6f} positive={probs[0, 1]:.6f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    params, _ = load_float(args.model)
    packed = pack_network(binarize_network(params))
    from .binarization import effective_weights_array

    weights = [effective_weights_array(p.weights) for p in params.layers]
    rng = np.random.default_rng(args.seed & 0xFFFFFFFFFFFFFFFF)
    spec = params.spec
    shape = (args.batch_size, spec.in_channels, *spec.input_hw)
    batches = [rng.random(shape) for _ in range(args.batches)]
    # warm both paths once so timing excludes first-call setup
    dense_predict(params, batches[0], weights)
    packed_forward(packed, batches[0])
    t0 = time.perf_counter()
    dense_out = [dense_predict(params, b, weights) for b in batches]
    t1 = time.perf_counter()
    packed_out = [packed_forward(packed, b) for b in batches]
    t2 = time.perf_counter()
    n = args.batches * args.batch_size
    dense_t, packed_t = t1 - t0, t2 - t1
    agree = all(
        np.array_equal(d[0], p[0]) for d, p in zip(dense_out, packed_out)
    )
    worst = max(
        float(np.max(np.abs(d[1] - p[1]) / np.maximum(np.abs(d[1]), 1e-12)))
        for d, p in zip(dense_out, packed_out)
    )
    counts = op_count_report(spec)
    print(f"samples: {n} ({args.batches} batches of {args.batch_size})")
    print(f"dense-reference path: {dense_t:.3f}s ({n / dense_t:.2f} samples/s) [measurement]")
    print(f"packed path:          {packed_t:.3f}s ({n / packed_t:.2f} samples/s) [measurement]")
    print(f"packed/dense wall-time ratio: {packed_t / dense_t:.3f} [measurement]")
    print(f"label agreement: {'100%' if agree else 'MISMATCH'}; worst prob rel err {worst:.3g}")
    print(
        "static op counts per sample: "
        f"dense multiplies {counts['multiplies_dense']}, packed multiplies "
        f"{counts['multiplies_packed']}, packed add/subs {counts['addsubs']}"
    )
    return EXIT_OK


def _layer_table(path) -> list[str]:
    kind = model_kind(path)
    if kind == "float":
        params, meta = load_float(path)
        spec = params.spec
    else:
        model, meta = load_packed(path)
        spec = model.spec
    rows = [f"kind: {kind} model, input {spec.in_channels}x{spec.input_hw[0]}x{spec.input_hw[1]}"]
    li = 0
    shapes = spec.kernel_shapes()
    for layer in spec.layers:
        if layer.kind in ("conv", "fc"):
            o, c, kh, kw, s = shapes[li]
            rows.append(
                f"  {layer.kind:7s} {kh}x{kw} stride {s} features {o} "
                f"({o * c * kh * kw} weights + {o} biases)"
            )
            li += 1
        elif layer.kind == "maxpool":
            rows.append(f"  maxpool {layer.size}x{layer.size} stride {layer.stride}")
        else:
            rows.append("  relu")
    if meta is not None:
        rows.append(f"metadata: iteration {meta.iteration}, seed {meta.seed}")
    return rows


def cmd_inspect(args) -> int:
    print(f"{args.model}: {Path(args.model).stat().st_size} bytes")
    for row in _layer_table(args.model):
        print(row)
    if args.compare:
        print(f"{args.compare}: {Path(args.compare).stat().st_size} bytes")
        for row in _layer_table(args.compare):
            print(row)
        kinds = {model_kind(args.model): args.model, model_kind(args.compare): args.compare}
        if set(kinds) != {"float", "packed"}:
            raise ValueError("compression ratio needs one float and one packed model")
        rep = compression_report(kinds["float"], kinds["packed"])
        print(
            f"compression: float {rep['float_bytes']} bytes / packed "
            f"{rep['bin_bytes']} bytes = {rep['ratio']:.2f}x"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bwcnn", description="binary-weight CNN trainer and evaluator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--positive-frac", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train float or binarized-mode masters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=None)
    p.add_argument("--mode", choices=("float", "binarized"), default="float")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("binarize", help="binarize a float model into a packed model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("eval", help="evaluate a model over a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify a single image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="time dense vs packed forward passes")
    p.add_argument("--model", required=True)
    p.add_argument("--batches", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="show model layout, sizes, compression")
    p.add_argument("--model", required=True)
    p.add_argument("--compare", default=None)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
