"""Command line entry points: training, ablation, evaluation artifacts, and
the inference server."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, evaluate, synthetic
from .training import TrainConfig, model_from_checkpoint, resume, run_ablation, train


def _parse_axis(text: str) -> tuple[int, list[float]]:
    """Parse 'AU2:0,0.2,0.4' or '3:0,0.5,1' into (label index, values)."""
    name, _, rest = text.partition(":")
    if not rest:
        raise argparse.ArgumentTypeError(f"axis {text!r} must look like AU2:0,0.2,...,1")
    name = name.strip()
    if name.upper() in data.AU_NAMES:
        index = data.AU_NAMES.index(name.upper())
    elif name in data.EMOTION_NAMES:
        index = data.EMOTION_NAMES.index(name)
    else:
        try:
            index = int(name)
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown label axis {name!r}")
    values = [float(v) for v in rest.split(",") if v.strip()]
    return index, values


def _cmd_make_corpus(args) -> int:
    manifest, truth = synthetic.make_synthetic_corpus(
        args.out, n_subjects=args.subjects, n_expressions=args.expressions, seed=args.seed
    )
    print(f"manifest: {manifest}\nground truth: {truth}")
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    result = train(config)
    print(f"finished at step {result.final_step}")
    print(f"checkpoint: {result.checkpoint_path}\nloss curves: {result.losses_path}")
    return 0


def _cmd_resume(args) -> int:
    result = resume(args.checkpoint)
    print(f"finished at step {result.final_step}\ncheckpoint: {result.checkpoint_path}")
    return 0


def _cmd_ablate(args) -> int:
    config = TrainConfig.from_json(args.config)
    report = run_ablation(
        config,
        positions=tuple(args.positions.split(",")),
        eval_manifest_path=args.eval_manifest,
        ground_truth_path=args.truth,
    )
    print(json.dumps(report, indent=2, sort_keys=True))
    failed = [k for k, ok in report.get("directional_checks", {}).items() if not ok]
    if failed:
        print(f"WARNING: directional checks failed: {failed}", file=sys.stderr)
    return 0


def _cmd_grid(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    source = data.preprocess(data.load_image(args.source))
    spec = evaluate.GridSpec(
        axis_x=_parse_axis(args.ax),
        axis_y=_parse_axis(args.ay),
        base_label=np.zeros(model.label_dim, dtype=np.float32),
        source=source,
    )
    tile, _ = evaluate.manifold_grid(model, spec)
    data.save_png(args.out, tile)
    print(f"grid: {args.out}")
    return 0


def _cmd_interpolate(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    source = data.preprocess(data.load_image(args.source))
    out = evaluate.interpolate_emotions(model, source, args.a, args.b, weight=args.w)
    data.save_png(args.out, data.postprocess(out))
    print(f"interpolation: {args.out}")
    return 0


def _cmd_compare(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    rows = [r for r in manifest.rows if r.subject_id == args.subject] if args.subject else manifest.rows
    rows = rows[: args.columns]
    if not rows:
        print("no rows matched", file=sys.stderr)
        return 1
    frames = [data.load_preprocessed(r) for r in rows]
    labels = [r.label for r in rows]
    strip = evaluate.comparison_strip(model, frames, labels, source_index=0)
    data.save_png(args.out, strip)
    print(f"comparison strip: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    report = evaluate.evaluate_model(model, args.manifest, args.truth)
    text = report.to_json(args.out)
    print(text if args.out is None else f"report: {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.checkpoint, port=args.port, host=args.host, cors_origins=tuple(args.cors_origin))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdaae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="render a synthetic face corpus with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--expressions", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_make_corpus)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("resume", help="continue training from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=_cmd_resume)

    p = sub.add_parser("ablate", help="train all skip-position variants and compare")
    p.add_argument("--config", required=True)
    p.add_argument("--positions", default="none,p1,p2,p3")
    p.add_argument("--eval-manifest", dest="eval_manifest", default=None)
    p.add_argument("--truth", default=None)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("grid", help="render a two-axis label sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="source face PNG")
    p.add_argument("--ax", required=True, help="e.g. AU2:0,0.2,0.4,0.6,0.8,1")
    p.add_argument("--ay", required=True, help="e.g. AU26:0,0.2,0.4,0.6,0.8,1")
    p.add_argument("--out", default="grid.png")
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("interpolate", help="blend two emotion classes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--a", required=True, help="first emotion class name")
    p.add_argument("--b", required=True, help="second emotion class name")
    p.add_argument("--w", type=float, default=0.5)
    p.add_argument("--out", default="interpolation.png")
    p.set_defaults(fn=_cmd_interpolate)

    p = sub.add_parser("compare", help="real-vs-generated strip for one subject")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subject", default=None)
    p.add_argument("--columns", type=int, default=8)
    p.add_argument("--out", default="comparison.png")
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("eval", help="identity/label-control metrics on a held-out corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--cors-origin", action="append", default=["*"])
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
