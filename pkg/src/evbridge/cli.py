"""Command-line entry point: ``evbridge <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or failed check, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import formats as fm
from .config import PipelineConfig
from .errors import EvBridgeError, UsageError
from .events import DEFAULT_CONTRAST, ContrastThreshold, EventHistogram, count_events, log_intensity_change
from .fields import ScalarField, VectorField, log_transform, spatial_gradient

SEED_ENV = "EVBRIDGE_SEED"
log = logging.getLogger("evbridge")


class CheckFailed(Exception):
    """A check ran to completion and reported FAIL."""


def _pair(text: str) -> tuple[float, float]:
    try:
        u, v = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return u, v


def _json_arg(text: str):
    """Inline JSON object or path to a JSON file."""
    p = Path(text)
    if p.exists():
        return fm.load_json(p)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise UsageError(f"{text!r} is neither a JSON file nor inline JSON") from None


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    seed = _seed(args, cfg.seed)
    return cfg if seed == cfg.seed else cfg.replace(seed=seed)


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return default


def _read(reader, path, *a):
    try:
        return reader(path, *a)
    except FileNotFoundError:
        raise EvBridgeError(f"{path}: no such file") from None
    except OSError as e:
        raise EvBridgeError(f"{path}: {e.strerror}") from None


def _sampler_flow(spec_arg, args, w, h) -> VectorField:
    from .flow import FlowSampler, FlowSamplerSpec

    d = dict(_json_arg(spec_arg))
    d.setdefault("seed", _seed(args))
    return FlowSampler(FlowSamplerSpec.from_dict(d)).sample(w, h)


def _preview(signed: np.ndarray) -> ScalarField:
    m = np.abs(signed).max(initial=0.0)
    return ScalarField(0.5 + 0.5 * signed / m if m > 0 else np.full(signed.shape, 0.5))


# ---------------------------------------------------------------- subcommands

def cmd_translate(args) -> int:
    img = _read(fm.read_pgm, args.image)
    if args.flow:
        flow = _read(fm.read_vector_field, args.flow)
        if flow.shape != img.shape:
            raise EvBridgeError(f"{args.flow}: flow is {flow.shape}, image {args.image} is {img.shape}")
    elif args.sample_flow:
        flow = _sampler_flow(args.sample_flow, args, img.width, img.height)
    else:
        raise UsageError("translate needs --flow or --sample-flow")
    if args.contrast is None:
        print(f"contrast threshold not given; using default {DEFAULT_CONTRAST}", file=sys.stderr)
        args.contrast = DEFAULT_CONTRAST
    c = ContrastThreshold(args.contrast)
    grad = spatial_gradient(log_transform(img, args.eps))
    counts = count_events(log_intensity_change(grad, flow, args.dt), c)
    hist = EventHistogram.from_signed(counts)
    if args.ckpt:
        hist = _refine_with_checkpoint(args, img, hist)
    fm.write_histogram(args.out, hist)
    fm.write_pgm(f"{args.out}_preview.pgm", _preview(hist.signed()))
    print(f"wrote {args.out}_pos.pfm {args.out}_neg.pfm {args.out}_preview.pgm "
          f"({int(hist.pos.sum())} ON, {int(hist.neg.sum())} OFF)")
    return 0


def _refine_with_checkpoint(args, img: ScalarField, hist: EventHistogram) -> EventHistogram:
    from . import autodiff as ad
    from .uda.networks import Networks

    cfg = _load_config(args)
    if img.shape != (cfg.resolution, cfg.resolution):
        raise EvBridgeError(f"{args.image}: model expects {cfg.resolution}x{cfg.resolution}, got {img.shape}")
    nets = Networks(cfg)
    nets.store.load_arrays(_read(fm.read_checkpoint, args.ckpt))
    rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(size=(1, cfg.noise_channels) + img.shape)
    with ad.no_grad():
        out = nets.refine_counts(ad.Tensor(hist.stack()[None]), noise).data[0]
    return EventHistogram(out[0], out[1])


def cmd_augment(args) -> int:
    from .flow import augment_flow

    pflow = _read(fm.read_vector_field, args.flow)
    if args.direction:
        dirfield = VectorField.constant(pflow.width, pflow.height, *args.direction)
    elif args.sample_flow:
        dirfield = _sampler_flow(args.sample_flow, args, pflow.width, pflow.height)
    else:
        raise UsageError("augment needs --direction or --sample-flow")
    out = augment_flow(pflow, dirfield)
    fm.write_vector_field(args.out, out)
    dev = float(np.max(np.abs(out.norm().data - pflow.norm().data), initial=0.0))
    print(f"wrote {args.out}_u.pfm {args.out}_v.pfm; max magnitude change {dev:.3e}")
    return 0


def cmd_losses(args) -> int:
    from .losses import PART_NAMES, compose_losses

    if args.parts:
        r = compose_losses(_json_arg(args.parts))
        print(r.to_json())
        return 0
    if not args.report:
        raise UsageError("losses needs --report or --parts")
    rows = _read(fm.read_jsonl, args.report)
    bad = 0
    for i, row in enumerate(rows):
        missing = [k for k in PART_NAMES + ("composite_gen", "composite_disc") if k not in row]
        if missing:
            raise EvBridgeError(f"{args.report}: line {i + 1} lacks {missing}")
        r = compose_losses({k: row[k] for k in PART_NAMES})
        for key in ("composite_gen", "composite_disc"):
            if not math.isclose(getattr(r, key), row[key], rel_tol=1e-12, abs_tol=1e-12):
                bad += 1
                print(f"line {i + 1}: {key} logged {row[key]!r}, recomputed {getattr(r, key)!r}")
    verdict = "PASS" if bad == 0 else "FAIL"
    print(f"{len(rows)} reports checked, {bad} mismatches (gen = sum of terms with 2x augm) {verdict}")
    if bad:
        raise CheckFailed
    return 0


def cmd_oracle_check(args) -> int:
    from .oracle import oracle_check

    if args.contrast is None:
        print(f"contrast threshold not given; using default {DEFAULT_CONTRAST}", file=sys.stderr)
        args.contrast = DEFAULT_CONTRAST
    r = oracle_check(args.scene, args.motion, args.contrast, args.eps)
    print(r.summary())
    if not r.passed:
        raise CheckFailed
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import TOLERANCE, check_pipeline, check_primitive, PRIMITIVES

    seed = _seed(args)
    rows = [(name, check_primitive(name, args.points, seed)) for name in PRIMITIVES]
    if not args.skip_pipeline:
        rows.append(("pipeline", check_pipeline(args.points, seed)))
    width = max(len(n) for n, _ in rows)
    print(f"{'primitive':<{width}}  max rel. error  ({args.points} points, tolerance {TOLERANCE:g})")
    failed = False
    for name, err in rows:
        ok = err < TOLERANCE
        failed |= not ok
        print(f"{name:<{width}}  {err:.3e}  {'ok' if ok else 'FAIL'}")
    if failed:
        raise CheckFailed
    return 0


def cmd_make_data(args) -> int:
    from .uda.scenes import datasets_for_config

    cfg = _load_config(args)
    over = {k: v for k, v in (("n_train_images", args.n_images), ("n_train_events", args.n_events),
                              ("n_test_events", args.n_test)) if v is not None}
    if over:
        cfg = cfg.replace(**over)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = datasets_for_config(cfg)
    train.to_npz(out / "train.npz")
    test.to_npz(out / "test.npz")
    print(f"wrote {out / 'train.npz'} ({cfg.n_train_images} images, {cfg.n_train_events} event histograms) "
          f"and {out / 'test.npz'} ({cfg.n_test_events} labeled event histograms)")
    return 0


def _datasets(args, cfg):
    from .uda.scenes import EventTestSet, ToyDataset, datasets_for_config

    if args.data:
        d = Path(args.data)
        return _read(ToyDataset.from_npz, d / "train.npz"), _read(EventTestSet.from_npz, d / "test.npz")
    return datasets_for_config(cfg)


def cmd_train(args) -> int:
    from .uda.pipeline import train

    cfg = _load_config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    data, test = _datasets(args, cfg)
    out = Path(args.out)
    res = train(cfg, data, test, out_dir=out, log_every=args.log_every)
    cfg.save(out / "config.json")
    print(f"trained {cfg.steps} steps; event test accuracy {res.accuracy:.4f}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    from .uda.networks import Networks
    from .uda.pipeline import evaluate

    cfg = _load_config(args)
    nets = Networks(cfg)
    nets.store.load_arrays(_read(fm.read_checkpoint, args.ckpt))
    _, test = _datasets(args, cfg)
    acc = evaluate(nets, test)
    print(f"accuracy {acc:.4f} on {len(test.labels)} event histograms")
    return 0


def cmd_transfer(args) -> int:
    from .uda.experiment import VARIANTS, run_transfer

    cfg = _load_config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    res = run_transfer(cfg, variants=args.variants or tuple(VARIANTS), data=_datasets(args, cfg))
    print(res.table())
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="PipelineConfig JSON file")
    common.add_argument("--seed", type=int, help=f"random seed (fallback: ${SEED_ENV})")

    p = argparse.ArgumentParser(prog="evbridge", description="Image-to-event translation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("translate", parents=[common], help="image + flow -> event histogram")
    t.add_argument("--image", required=True, help="8-bit PGM")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--flow", help="prefix of <prefix>_u.pfm / <prefix>_v.pfm, in pixels per dt")
    g.add_argument("--sample-flow", help="flow sampler spec (JSON file or inline JSON)")
    t.add_argument("--contrast", type=float, help=f"contrast threshold C (default {DEFAULT_CONTRAST})")
    t.add_argument("--eps", type=float, default=1e-3, help="log offset")
    t.add_argument("--dt", type=float, default=1.0)
    t.add_argument("--ckpt", help="checkpoint whose refinement block is applied to the model output")
    t.add_argument("--out", required=True, help="output prefix")
    t.set_defaults(func=cmd_translate)

    a = sub.add_parser("augment", parents=[common], help="re-direct a pseudo-flow, keeping magnitudes")
    a.add_argument("--flow", required=True, help="prefix of the pseudo-flow PFM pair")
    g = a.add_mutually_exclusive_group()
    g.add_argument("--direction", type=_pair, help="constant direction u,v")
    g.add_argument("--sample-flow", help="flow sampler spec supplying directions")
    a.add_argument("--out", required=True, help="output prefix")
    a.set_defaults(func=cmd_augment)

    lo = sub.add_parser("losses", parents=[common], help="compose loss parts or verify a training log")
    g = lo.add_mutually_exclusive_group()
    g.add_argument("--report", help="losses.jsonl written by train")
    g.add_argument("--parts", help="JSON object of named parts")
    lo.set_defaults(func=cmd_losses)

    o = sub.add_parser("oracle-check", parents=[common], help="linearized model vs brute-force oracle")
    o.add_argument("--scene", required=True, choices=["ramp", "step", "bar"])
    o.add_argument("--motion", type=_pair, default=(1.0, 0.0), help="translation u,v in pixels")
    o.add_argument("--contrast", type=float)
    o.add_argument("--eps", type=float, default=1e-3)
    o.set_defaults(func=cmd_oracle_check)

    gc = sub.add_parser("grad-check", parents=[common], help="central-difference gradient checks")
    gc.add_argument("--points", type=int, default=20, help="random points per primitive")
    gc.add_argument("--skip-pipeline", action="store_true", help="only the primitives")
    gc.set_defaults(func=cmd_grad_check)

    m = sub.add_parser("make-data", parents=[common], help="generate the toy image/event datasets")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--n-images", type=int)
    m.add_argument("--n-events", type=int)
    m.add_argument("--n-test", type=int)
    m.set_defaults(func=cmd_make_data)

    tr = sub.add_parser("train", parents=[common], help="train the toy adaptation pipeline")
    tr.add_argument("--data", help="directory from make-data (default: generate from config)")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--steps", type=int, help="override config steps")
    tr.add_argument("--log-every", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="event-domain accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", help="directory from make-data (default: generate from config)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("transfer", parents=[common], help="baseline, full pipeline and ablations")
    x.add_argument("--data", help="directory from make-data (default: generate from config)")
    x.add_argument("--steps", type=int, help="override config steps")
    x.add_argument("--variants", nargs="+", choices=["baseline", "full", "no_augm", "no_flow"])
    x.set_defaults(func=cmd_transfer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CheckFailed:
        return 1
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"evbridge: error: {e}", file=sys.stderr)
        return 2
    except (EvBridgeError, ValueError) as e:
        print(f"evbridge: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
