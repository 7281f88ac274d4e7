"""Command-line entry points.

Exit codes: 0 success, 1 invalid input (flags, files, scenes, configs),
2 unexpected runtime failure. Every command takes --seed and is
deterministic given it. When --config is passed, values from the file take
precedence over conflicting flags.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
from PIL import Image

from .config import load_toml
from .data import (
    GenConfig,
    load_corpus,
    make_sparse_inputs,
    read_inputs_jsonl,
    save_corpus,
    write_inputs_jsonl,
)
from .diffusion.checkpoint import load_checkpoint
from .diffusion.sampling import ddim_sample
from .diffusion.training import TrainConfig, train
from .guidance import FAST, MULTI, ConditionSet, GuidanceSpec
from .metrics import EvalConfig, evaluate
from .representation import build_binary, build_st_infer
from .scene import concat_prompts, parse_scene, to_rst

_DEFAULTS_NOTE = (
    "defaults: guidance fast s=3; training lambda_vlb=0.001, condition dropout 0.1"
)


def _write_png(path: str, image: np.ndarray) -> None:
    Image.fromarray(np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)).save(
        path, format="PNG"
    )


def _guidance_from_args(args) -> GuidanceSpec:
    if args.mode == FAST:
        return GuidanceSpec(mode=FAST, scales=(args.scale,))
    return GuidanceSpec(mode=MULTI, scales=(args.scale_global, args.scale_scene))


def _add_guidance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=[FAST, MULTI], default=FAST, help="guidance mode (default fast)")
    p.add_argument("--scale", type=float, default=3.0, help="joint scale for fast mode (default 3)")
    p.add_argument("--scale-global", type=float, default=3.0, help="global-text scale for multi mode")
    p.add_argument("--scale-scene", type=float, default=3.0, help="scene scale for multi mode")
    p.add_argument("--steps", type=int, default=None, help="sampling steps (default 250 pixel / 50 latent)")


def cmd_make_corpus(args) -> int:
    config = GenConfig(canvas=args.canvas)
    manifest = save_corpus(args.out, args.n, config, seed=args.seed, val_fraction=args.val_fraction)
    splits = [s["split"] for s in manifest["samples"]]
    print(f"wrote {args.n} samples to {args.out} (train {splits.count('train')}, val {splits.count('val')})")
    return 0


def cmd_train(args) -> int:
    overrides = {}
    for key in ("corpus", "out", "space", "representation", "steps", "batch_size", "lr", "seed", "limit"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    doc = dict(overrides)
    if args.config:
        doc.update(load_toml(args.config))
    config = TrainConfig.from_dict(doc)
    ckpt = train(config)
    print(
        f"trained {config.space}/{config.representation} model for {config.steps} steps"
        + (f"; checkpoint at {config.out}" if config.out else "")
        + f" (fingerprint {ckpt.config_fingerprint})"
    )
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    with open(args.scene, "rb") as f:
        scene = parse_scene(f.read())
    if tuple(scene.canvas) != tuple(ckpt.resolution):
        raise ValueError(
            f"scene canvas {scene.canvas[0]}x{scene.canvas[1]} does not match checkpoint "
            f"{ckpt.resolution[0]}x{ckpt.resolution[1]}"
        )
    rst = to_rst(scene)
    prompt = scene.global_prompt
    if not args.no_concat and scene.segments:
        prompt = concat_prompts(scene.global_prompt, [s.prompt for s in scene.segments])
    text = ckpt.embedder.embed_text(prompt)
    if len(rst.prompts) == 0:
        st = None
    elif ckpt.representation == "binary":
        st = build_binary(rst)
    else:
        prior = None if args.no_prior else ckpt.prior
        st = build_st_infer(rst, ckpt.embedder, prior=prior)
    image = ddim_sample(
        ckpt,
        ConditionSet(global_text=text, st=st),
        guidance=_guidance_from_args(args),
        steps=args.steps,
        seed=args.seed,
    )
    _write_png(args.out, image)
    print(f"wrote {args.out}")
    return 0


def cmd_make_inputs(args) -> int:
    samples = load_corpus(args.corpus, split=args.split)
    rng = np.random.default_rng(args.seed)
    inputs = []
    skipped = 0
    for sample in samples:
        if args.n is not None and len(inputs) >= args.n:
            break
        inp = make_sparse_inputs(
            sample.labels, sample.label_names, sample.caption, rng, provenance=sample.id
        )
        if inp is None:
            skipped += 1
            continue
        inputs.append(inp)
    if not inputs:
        raise ValueError(f"no usable inputs in {args.corpus} (split {args.split})")
    write_inputs_jsonl(inputs, args.out)
    print(f"wrote {len(inputs)} inputs to {args.out} ({skipped} skipped)")
    return 0


def _run_eval(ckpt, inputs, args, guidance, reference) -> "EvalReport":
    config = EvalConfig(
        guidance=guidance,
        steps=args.steps,
        seed=args.seed,
        batch_size=args.batch_size,
        use_prior=args.ablation != "no-prior",
    )
    return evaluate(ckpt, inputs, config, reference_images=reference)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    inputs = read_inputs_jsonl(args.inputs)
    if args.n is not None:
        inputs = inputs[: args.n]
    if args.ablation == "binary" and ckpt.representation != "binary":
        raise ValueError(
            "the binary ablation needs a checkpoint trained with representation=binary"
        )
    reference = None
    if args.reference_corpus:
        reference = [s.image for s in load_corpus(args.reference_corpus, split="val", limit=args.reference_n)]

    if args.ablation == "multi-vs-fast":
        scale = args.scale
        reports = {
            "fast": _run_eval(ckpt, inputs, args, GuidanceSpec(mode=FAST, scales=(scale,)), reference),
            "multi": _run_eval(
                ckpt, inputs, args, GuidanceSpec(mode=MULTI, scales=(scale, scale)), reference
            ),
        }
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({k: json.loads(r.to_json()) for k, r in reports.items()}, f, indent=1)
        for name, report in reports.items():
            print(f"{name}: {json.dumps(report.aggregates)}")
        return 0

    report = _run_eval(ckpt, inputs, args, _guidance_from_args(args), reference)
    report.save(args.out)
    print(
        f"n={report.n} failures={report.failures} "
        + " ".join(f"{k}={v:.4f}" for k, v in report.aggregates.items())
        + (f" frechet={report.frechet:.4f}" if report.frechet is not None else "")
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        checkpoint_dir=args.checkpoints,
        job_dir=args.jobs,
        workers=args.workers,
        default_seed=args.seed,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenediff",
        description="Segment-conditioned toy diffusion pipeline.",
        epilog=_DEFAULTS_NOTE,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate a synthetic shapes corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--canvas", type=int, default=32)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_corpus)

    p = sub.add_parser(
        "train",
        help="train a diffusion model",
        description="Flags mirror the config file keys; --config values win. " + _DEFAULTS_NOTE,
    )
    p.add_argument("--config", default=None, help="TOML config (takes precedence over flags)")
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--space", choices=["pixel", "latent"], default=None)
    p.add_argument("--representation", choices=["st", "binary"], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="sample one image from a scene file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    _add_guidance_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-concat", action="store_true", help="do not append local prompts to the global prompt")
    p.add_argument("--no-prior", action="store_true", help="feed text embeddings directly (skip the prior)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("make-inputs", help="convert dense labels into sparse eval inputs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_inputs)

    p = sub.add_parser("eval", help="run the metric suite over sparse inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--reference-corpus", default=None, help="corpus whose val split anchors the feature distance")
    p.add_argument("--reference-n", type=int, default=500)
    p.add_argument(
        "--ablation",
        choices=["binary", "no-prior", "multi-vs-fast"],
        default=None,
        help="binary: require the binary-representation pipeline; no-prior: direct text embeddings; multi-vs-fast: both guidance modes",
    )
    _add_guidance_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP generation service")
    p.add_argument("--checkpoints", required=True, help="directory of .ckpt files")
    p.add_argument("--jobs", default="jobs", help="on-disk job store directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="seed for jobs that do not specify one")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"unexpected failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
