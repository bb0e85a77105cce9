"""Command-line entry points.

Exit codes: 0 success, 2 usage error, 1 runtime error (one machine-parsable
``error: ...`` line on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import container
from .errors import ConfigurationError, SegGraphError
from .model import AblationFlags, ModelConfig
from .pipeline import corpus_shape_dirs, load_processed, preprocess_shape
from .synth import SynthConfig, make_corpus
from .train import TrainConfig, mean_iou, predict_labels, train_fewshot, write_ply


def _read_config_file(path: str) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {raw!r} is not key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _coerce(val: str):
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            pass
    if val.lower() in ("true", "false"):
        return val.lower() == "true"
    return val


def _add_ablation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mlp-baseline", action="store_true", help="point MLP on projected pooled features (no segments)")
    p.add_argument("--no-segment-encoder", action="store_true", help="mean-pool segment features")
    p.add_argument("--uniform-unpool", action="store_true", help="uniform instead of quality-weighted unpooling")
    p.add_argument("--no-overlap-edges", action="store_true")
    p.add_argument("--no-adjacency-edges", action="store_true")
    p.add_argument("--no-graph", action="store_true", help="skip graph propagation entirely")


def _flags_from_args(args) -> AblationFlags:
    return AblationFlags(
        mlp_baseline=args.mlp_baseline,
        no_segment_encoder=args.no_segment_encoder,
        uniform_unpool=args.uniform_unpool,
        no_overlap_edges=args.no_overlap_edges,
        no_adjacency_edges=args.no_adjacency_edges,
        no_graph=args.no_graph,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seggraph", description="Few-shot 3D part segmentation pipeline")
    parser.add_argument("--config", help="key=value config file applied as defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-train", type=int, default=8)
    p.add_argument("--num-test", type=int, default=20)
    p.add_argument("--parts", type=int, default=5)
    p.add_argument("--points", type=int, default=1200)
    p.add_argument("--feature-noise", type=float, default=1.2)

    p = sub.add_parser("preprocess", help="visibility, decomposition, lifting, pooling, graph")
    p.add_argument("--data", required=True, help="corpus directory (corpus.json) or one shape directory")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("train", help="few-shot training")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="comma-separated training seeds; reports mean +/- SD")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--shots", type=int, default=8)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--eval-test", action="store_true", help="evaluate each trained model on the test split")
    _add_ablation_flags(p)

    p = sub.add_parser("predict", help="predict labels for one preprocessed shape")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--out", required=True, help="output label blob path")

    p = sub.add_parser("eval", help="mIoU between two label blobs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--small-fraction", type=float, default=0.05)

    p = sub.add_parser("validate", help="check a shape directory against the container schema")
    p.add_argument("--shape", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all primitives and the full loss")
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("export-pca", help="PCA feature colors to an ASCII PLY")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source", choices=("fused", "pooled"), default="fused")
    return parser


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed,
        num_train=args.num_train,
        num_test=args.num_test,
        parts_per_shape=args.parts,
        points_per_shape=args.points,
        feature_noise=args.feature_noise,
    )
    corpus = make_corpus(cfg, args.out)
    print(f"wrote {len(corpus['train'])} train + {len(corpus['test'])} test shapes to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    data = Path(args.data)
    if (data / "manifest.json").is_file():
        dirs = [data]
    elif (data / "corpus.json").is_file():
        corpus = json.loads((data / "corpus.json").read_text(encoding="utf-8"))
        dirs = [data / name for name in corpus["train"] + corpus["test"]]
    else:
        raise ConfigurationError(f"{data} holds neither manifest.json nor corpus.json")
    totals: dict[str, float] = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for timings in pool.map(preprocess_shape, dirs):
                for key, val in timings.items():
                    totals[key] = totals.get(key, 0.0) + val
    else:
        for d in dirs:
            for key, val in preprocess_shape(d).items():
                totals[key] = totals.get(key, 0.0) + val
    stages = " ".join(f"{k}={v:.2f}s" for k, v in totals.items())
    print(f"[time] {stages} shapes={len(dirs)}")
    return 0


def _save_checkpoint(out_dir: Path, params, model_cfg: ModelConfig, flags: AblationFlags, category: str) -> None:
    meta = {
        "model": {
            "c": model_cfg.c,
            "c_in": model_cfg.c_in,
            "k": model_cfg.k,
            "heads": model_cfg.heads,
            "quality_hidden": model_cfg.quality_hidden,
            "leaky_slope": model_cfg.leaky_slope,
            "gat_layers": model_cfg.gat_layers,
        },
        "flags": {
            "mlp_baseline": flags.mlp_baseline,
            "no_segment_encoder": flags.no_segment_encoder,
            "uniform_unpool": flags.uniform_unpool,
            "no_overlap_edges": flags.no_overlap_edges,
            "no_adjacency_edges": flags.no_adjacency_edges,
            "no_graph": flags.no_graph,
        },
        "category": category,
    }
    container.save_checkpoint(out_dir, params, meta)


def _load_checkpoint(ckpt_dir: Path):
    from .model import init_params

    meta, arrays = container.load_checkpoint(ckpt_dir)
    model_cfg = ModelConfig(**meta["model"])
    flags = AblationFlags(**meta["flags"])
    params = init_params(model_cfg, seed=0)
    params.load_arrays(arrays)
    return params, model_cfg, flags, meta


def _cmd_train(args) -> int:
    corpus_dir = Path(args.data)
    corpus = json.loads((corpus_dir / "corpus.json").read_text(encoding="utf-8"))
    flags = _flags_from_args(args)
    train_batches = [load_processed(d) for d in corpus_shape_dirs(corpus_dir, "train")]
    model_cfg = ModelConfig(c=args.width, c_in=int(corpus["c_in"]), k=int(corpus["k"]))
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]

    test_batches = None
    scores = []
    for seed in seeds:
        cfg = TrainConfig(shots=args.shots, epochs=args.epochs, lr=args.lr, seed=seed, flags=flags, category=corpus["category"])
        t0 = time.perf_counter()
        params, curve = train_fewshot(cfg, train_batches, model_cfg)
        t_train = time.perf_counter() - t0
        out = Path(args.out) if len(seeds) == 1 else Path(args.out) / f"seed_{seed}"
        _save_checkpoint(out, params, model_cfg, flags, corpus["category"])
        last = curve[-1] if curve else float("nan")
        print(f"[time] train={t_train:.2f}s seed={seed} final_loss={last:.4f} checkpoint={out}")
        if args.eval_test:
            if test_batches is None:
                test_batches = [load_processed(d) for d in corpus_shape_dirs(corpus_dir, "test")]
            t0 = time.perf_counter()
            mious = []
            for batch in test_batches:
                pred, _ = predict_labels(params, batch, model_cfg, flags)
                _, miou, _, _ = mean_iou(pred, batch.labels, model_cfg.k)
                mious.append(miou)
            t_inf = time.perf_counter() - t0
            score = float(np.mean(mious))
            scores.append(score)
            print(f"[time] inference={t_inf:.2f}s seed={seed} miou={score:.4f}")
    if args.eval_test and scores:
        arr = np.array(scores)
        sd = arr.std(ddof=1) if len(arr) > 1 else 0.0
        print(f"category={corpus['category']} seeds={','.join(map(str, seeds))} miou_mean={arr.mean():.4f} miou_sd={sd:.4f}")
    return 0


def _cmd_predict(args) -> int:
    params, model_cfg, flags, meta = _load_checkpoint(Path(args.checkpoint))
    man = container.read_manifest(args.shape)
    if int(man["c_in"]) != model_cfg.c_in:
        raise ConfigurationError(f"shape c_in {man['c_in']} does not match checkpoint c_in {model_cfg.c_in}")
    batch = load_processed(args.shape)
    t0 = time.perf_counter()
    pred, logits = predict_labels(params, batch, model_cfg, flags)
    t_inf = time.perf_counter() - t0
    container.write_blob(args.out, container.encode_labels(pred))
    print(f"[time] inference={t_inf:.2f}s points={len(pred)} out={args.out}")
    return 0


def _cmd_eval(args) -> int:
    pred = container.decode_labels(container.read_blob(args.pred))
    gt = container.decode_labels(container.read_blob(args.gt))
    per_class, miou, acc, nvalid = mean_iou(pred, gt, args.k)
    from .train import small_part_breakdown

    small, large, small_ids = small_part_breakdown(pred, gt, args.k, args.small_fraction)
    report = {
        "miou": miou,
        "point_accuracy": acc,
        "per_class_iou": [None if v is None else round(v, 6) for v in per_class],
        "small_miou": small,
        "large_miou": large,
        "small_classes": small_ids,
        "num_valid_points": nvalid,
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    man = container.validate_shape_dir(args.shape)
    print(f"ok: {args.shape} ({man['num_points']} points, {man['num_views']} views, provenance={man['provenance']})")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradsuite import end_to_end_gradcheck, op_gradchecks

    worst = 0.0
    for name, err in op_gradchecks(args.seed).items():
        print(f"gradcheck {name}: max_rel_err={err:.3e}")
        worst = max(worst, err)
    err = end_to_end_gradcheck(args.seed)
    print(f"gradcheck end_to_end: max_rel_err={err:.3e}")
    worst = max(worst, err)
    if worst >= 1e-4:
        print(f"error: gradcheck failed with max relative error {worst:.3e}", file=sys.stderr)
        return 1
    return 0


def _cmd_export_pca(args) -> int:
    from .model import forward
    from .train import export_pca_colors

    params, model_cfg, flags, meta = _load_checkpoint(Path(args.checkpoint))
    batch = load_processed(args.shape)
    if args.source == "pooled":
        feats = batch.bank
    else:
        result = forward(params, batch, model_cfg, flags)
        feats = result.fused.data
    colors = export_pca_colors(feats)
    write_ply(args.out, batch.positions, colors)
    print(f"wrote {len(colors)} colored points to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "validate": _cmd_validate,
    "gradcheck": _cmd_gradcheck,
    "export-pca": _cmd_export_pca,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    if "--config" in argv:
        at = argv.index("--config")
        if at + 1 >= len(argv):
            parser.error("--config needs a file path")
        defaults = {k: _coerce(v) for k, v in _read_config_file(argv[at + 1]).items()}
        for action in parser._subparsers._group_actions:
            for sub in action.choices.values():
                known = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        del argv[at : at + 2]
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SegGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
