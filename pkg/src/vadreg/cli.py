"""Command-line entry point: train, evaluate, ablate, stats, oracle-check, serve.

Every run writes a manifest with the fully resolved configuration before any
work starts, so a run can be reproduced from its output directory alone.
Exit codes: 0 success, 1 internal check failure, 2 bad input, 3 divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    consistency_filter,
    format_distribution,
    load_annotations_path,
    load_exclusions,
    parse_fer2013_path,
    to_training_set,
    vad_distribution,
    Split,
)
from .model import (
    Dimension,
    NetworkConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
)
from .report import (
    EvalReport,
    EvalSplit,
    Method,
    evaluate,
    from_records,
    rank_aggregate,
    render_ranks,
    render_tables,
    to_records,
)
from .train import TrainingDivergedError, train, write_trace

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3

SPLIT_FOR_EVAL = {EvalSplit.PUBLIC: Split.PUBLIC_TEST, EvalSplit.PRIVATE: Split.PRIVATE_TEST}


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("VADREG_OUT", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, subcommand: str, config: dict) -> None:
    manifest = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "config": config,
        "out_dir": str(out),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_report_metadata(out: Path, report, checkpoints: dict, labels_path) -> None:
    # timestamps live here, away from the byte-stable primary outputs
    report.metadata.update({
        "checkpoints": {k: str(v) for k, v in checkpoints.items()},
        "dataset_sha256": _file_sha256(labels_path),
        "timestamp": int(time.time()),
    })
    (out / "metadata.json").write_text(
        json.dumps(report.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_labeled_split(fer_path, labels_path, split: Split):
    images = [img for img in parse_fer2013_path(fer_path) if img.split == split]
    records = load_annotations_path(labels_path)
    accepted = consistency_filter(records).accepted
    present = {img.index for img in images}
    labels = {idx: t for idx, t in accepted.items() if idx in present}
    return to_training_set(images, labels)


def _dim_targets(y: np.ndarray, dim: Dimension) -> np.ndarray:
    return y[:, [Dimension.V, Dimension.A, Dimension.D].index(dim)]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    out = _out_dir(args)
    dims = list(Dimension) if args.dim == "all" else [Dimension(args.dim)]
    net_cfg = NetworkConfig(preset=args.preset, seed=args.seed,
                            ortho_layers=None if args.ortho_layers is None
                            else tuple(args.ortho_layers))
    train_cfg = TrainConfig(batch_size=args.batch_size, lr0=args.lr,
                            epochs=args.epochs, orth_weight=args.orth_weight,
                            seed=args.seed, max_iters=args.max_iters)
    _write_manifest(out, "train", {
        "dims": [d.value for d in dims],
        "network": {"preset": net_cfg.preset, "seed": net_cfg.seed,
                    "ortho_layers": args.ortho_layers},
        "training": {"batch_size": train_cfg.batch_size, "lr0": train_cfg.lr0,
                     "lr_decay_factor": train_cfg.lr_decay_factor,
                     "lr_decay_every": train_cfg.lr_decay_every,
                     "epochs": train_cfg.epochs, "orth_weight": train_cfg.orth_weight,
                     "seed": train_cfg.seed, "max_iters": train_cfg.max_iters},
        "fer2013": str(args.fer2013), "labels": str(args.labels),
    })
    x, y = _load_labeled_split(args.fer2013, args.labels, Split.TRAINING)
    for dim in dims:
        model = build_model(net_cfg, dim)
        result = train(model, x, _dim_targets(y, dim), train_cfg,
                       checkpoint_path=out / f"checkpoint_{dim.value}.ckpt")
        write_trace(result.trace, out / f"trace_{dim.value}.csv")
        last = result.trace[-1]
        print(f"dim={dim.value} iterations={last.iteration + 1} "
              f"l_task={last.l_task:.6f} l_orth={last.l_orth:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    _write_manifest(out, "evaluate", {
        "checkpoints": {d: str(p) for d, p in _checkpoint_args(args).items()},
        "fer2013": str(args.fer2013), "labels": str(args.labels),
        "split": args.split,
    })
    splits = list(EvalSplit) if args.split == "both" else [EvalSplit(args.split)]
    report = EvalReport(metadata={"tool_version": __version__})
    for which, path in _checkpoint_args(args).items():
        model = load_checkpoint(path)
        for esplit in splits:
            x, y = _load_labeled_split(args.fer2013, args.labels, SPLIT_FOR_EVAL[esplit])
            value = evaluate(model, x, _dim_targets(y, model.dimension))
            report.set(model.dimension, esplit, Method(args.method), value)
            print(f"dim={model.dimension.value} split={esplit.value} rmse={value:.6f}")
    (out / "records.txt").write_text(to_records(report), encoding="utf-8")
    _write_report_metadata(out, report, _checkpoint_args(args), args.labels)
    return EXIT_OK


def _checkpoint_args(args) -> dict[str, Path]:
    return {f"ckpt{i}": Path(p) for i, p in enumerate(args.checkpoint)}


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    if args.from_report:
        _write_manifest(out, "ablate", {"from_report": str(args.from_report)})
        report = from_records(Path(args.from_report).read_text(encoding="utf-8"))
    else:
        if args.fer2013 is None or args.labels is None:
            raise ValueError("ablate needs --fer2013 and --labels (or --from-report)")
        net_seed = args.seed
        _write_manifest(out, "ablate", {
            "preset": args.preset, "seed": net_seed, "epochs": args.epochs,
            "max_iters": args.max_iters, "orth_weight": args.orth_weight,
            "batch_size": args.batch_size, "lr": args.lr,
            "fer2013": str(args.fer2013), "labels": str(args.labels),
        })
        x, y = _load_labeled_split(args.fer2013, args.labels, Split.TRAINING)
        eval_sets = {
            esplit: _load_labeled_split(args.fer2013, args.labels, split)
            for esplit, split in SPLIT_FOR_EVAL.items()
        }
        report = EvalReport(metadata={"tool_version": __version__})
        net_cfg = NetworkConfig(preset=args.preset, seed=net_seed)
        checkpoints = {}
        for method, lam in ((Method.BASELINE, 0.0), (Method.ORTHO, args.orth_weight)):
            train_cfg = TrainConfig(batch_size=args.batch_size, lr0=args.lr,
                                    epochs=args.epochs, orth_weight=lam,
                                    seed=net_seed, max_iters=args.max_iters)
            for dim in Dimension:
                model = build_model(net_cfg, dim)
                ckpt = out / f"checkpoint_{method.value}_{dim.value}.ckpt"
                result = train(model, x, _dim_targets(y, dim), train_cfg,
                               checkpoint_path=ckpt)
                write_trace(result.trace, out / f"trace_{method.value}_{dim.value}.csv")
                checkpoints[f"{method.value}_{dim.value}"] = ckpt
                for esplit, (ex, ey) in eval_sets.items():
                    report.set(dim, esplit, method,
                               evaluate(model, ex, _dim_targets(ey, dim)))
        _write_report_metadata(out, report, checkpoints, args.labels)
    tables = render_tables(report)
    ranks = render_ranks(rank_aggregate(report, Method.ORTHO))
    (out / "records.txt").write_text(to_records(report), encoding="utf-8")
    (out / "tables.txt").write_text(tables + ranks + "\n", encoding="utf-8")
    print(tables)
    print(ranks)
    return EXIT_OK


def cmd_stats(args) -> int:
    out = _out_dir(args)
    _write_manifest(out, "stats", {
        "labels": str(args.labels),
        "fer2013": None if args.fer2013 is None else str(args.fer2013),
    })
    records = load_annotations_path(args.labels)
    accepted = consistency_filter(records).accepted
    table = vad_distribution(accepted.values())
    lines = [f"annotation records: {len(records)}",
             f"consistency-accepted images: {len(accepted)}",
             format_distribution(table)]
    if args.fer2013 is not None:
        images = parse_fer2013_path(args.fer2013)
        split_of = {img.index: img.split for img in images}
        counts = {s: 0 for s in Split}
        for idx in accepted:
            if idx in split_of:
                counts[split_of[idx]] += 1
        lines.append("annotated images per split:")
        for s in Split:
            lines.append(f"  {s.value:<12} {counts[s]}")
        lines.append(f"  {'Total':<12} {sum(counts.values())}")
    text = "\n".join(lines)
    (out / "stats.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    out = _out_dir(args)
    _write_manifest(out, "oracle-check", {"seed": args.seed})
    from .autodiff import Tensor, conv2d, finite_diff_check, frobenius_sq, mse_loss
    from .oracles import self_conv_reference
    from .ortho import ConvKernel, build_dbt, orth_loss, self_conv

    rng = np.random.default_rng(args.seed)
    failures: list[str] = []

    dbt_err = 0.0
    for c in (1, 2):
        for m in (1, 2):
            for k in (1, 2, 3):
                for s in (1, 2):
                    for h in (4, 6):
                        w = rng.normal(size=(m, c, k, k))
                        kern = ConvKernel(Tensor(w), stride=s, padding=0)
                        dbt = build_dbt(kern, (c, h, h))
                        for _ in range(3):
                            x = rng.normal(size=(c, h, h))
                            got = dbt.matrix @ x.reshape(-1)
                            want = conv2d(Tensor(x), Tensor(w), stride=s).data.reshape(-1)
                            dbt_err = max(dbt_err, float(np.abs(got - want).max()))
    print(f"dbt-vs-conv max abs error: {dbt_err:.3e}")
    if dbt_err > 1e-10:
        failures.append("dbt")

    sc_err = 0.0
    for _ in range(20):
        m, c, k, s = (int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                      int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        w = rng.normal(size=(m, c, k, k))
        z = self_conv(ConvKernel(Tensor(w), stride=s)).data
        sc_err = max(sc_err, float(np.abs(z - self_conv_reference(w, s)).max()))
    print(f"self-conv-vs-bruteforce max abs error: {sc_err:.3e}")
    if sc_err > 1e-10:
        failures.append("self-conv")

    grad_err = 0.0
    for _ in range(5):
        w = rng.normal(size=(2, 2, 3, 3))
        err = finite_diff_check(
            lambda t: orth_loss(ConvKernel(t, stride=1)), Tensor(w))
        grad_err = max(grad_err, err)
        t = Tensor(rng.normal(size=(3, 3)))
        grad_err = max(grad_err, finite_diff_check(frobenius_sq, t))
        tgt = Tensor(rng.normal(size=(5,)))
        grad_err = max(grad_err, finite_diff_check(lambda p: mse_loss(p, tgt),
                                                   Tensor(rng.normal(size=(5,)))))
    print(f"gradient-check max relative error: {grad_err:.3e}")
    if grad_err > 1e-4:
        failures.append("gradients")

    if args.force_fail:
        failures.append("forced")
    if failures:
        print(f"FAIL: {', '.join(failures)}")
        return EXIT_CHECK_FAILED
    print("all oracle suites passed")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import AnnotationStore, create_app

    images = parse_fer2013_path(args.fer2013)
    exclusions = set()
    if args.exclusions is not None:
        with open(args.exclusions, "r", encoding="utf-8") as f:
            exclusions = load_exclusions(f)
    store = AnnotationStore(args.log)
    app = create_app(images, store, exclusions, min_annotators=args.min_annotators,
                     max_spread=args.max_spread, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fer2013", required=True, help="FER2013-format CSV")
    p.add_argument("--labels", required=True, help="annotation CSV")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=("mini", "resnet18"), default="resnet18")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lambda", dest="orth_weight", type=float, default=0.1,
                   help="weight of the orthogonality penalty (0 disables)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vadreg", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train per-dimension regression models")
    p.add_argument("--dim", choices=("v", "a", "d", "all"), default="all")
    p.add_argument("--ortho-layers", type=int, nargs="*", default=None,
                   help="conv layer indices to regularize (default: all)")
    _add_train_flags(p)
    _add_common_data_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="RMSE of checkpoints on test splits")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint file (repeatable)")
    p.add_argument("--split", choices=("public", "private", "both"), default="both")
    p.add_argument("--method", choices=("baseline", "ortho"), default="ortho",
                   help="method label for the emitted records")
    _add_common_data_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="paired baseline/orthogonality runs + report")
    p.add_argument("--from-report", default=None,
                   help="skip training; render tables/ranks from a records file")
    _add_train_flags(p)
    p.add_argument("--fer2013", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", help="annotation distribution and split accounting")
    p.add_argument("--labels", required=True)
    p.add_argument("--fer2013", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("oracle-check", help="run the independent-oracle suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force-fail", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--fer2013", required=True)
    p.add_argument("--log", required=True, help="append-only annotation log path")
    p.add_argument("--exclusions", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", default=None, help="directory with the web UI build")
    p.add_argument("--min-annotators", type=int, default=1)
    p.add_argument("--max-spread", type=int, default=1)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
