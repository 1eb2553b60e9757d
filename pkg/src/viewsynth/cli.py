"""Command-line surface.

Subcommands: gen-data, train, synth, rotate360, eval, gradcheck.
Exit codes are a stable contract: 0 success, 2 parameter error, 3 missing
state/prerequisite, 4 I/O error (gradcheck failures exit 1).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import tensorio
from .autodiff import REGISTRY, grad_check, tolerance_for
from .autodiff.tensor import Tensor
from .dataset import PairDataset, ViewSpec, generate_dataset, validate_manifest
from .errors import ParameterError, ShapeError, StateError
from .geometry import DEFAULT_RADIUS, PROCEDURAL_KINDS
from .metrics import evaluate_pairs, write_report
from .models import completion_forward, doafn_forward, load_checkpoint
from .training import (LOSS_PRESETS, TrainConfig, encode_transform,
                       pretrain_perceptual, train_baseline, train_completion,
                       train_doafn)

THETA_RANGE = (20, 340)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    kinds = list(PROCEDURAL_KINDS) if args.kind == "mixed" else [args.kind]
    entries = []
    for i in range(args.count):
        kind = kinds[i % len(kinds)]
        seed = args.seed + i
        entries.append({"id": f"{kind.split('-')[0]}{seed:04d}", "kind": kind,
                        "seed": seed})
    elevations = tuple(int(x) for x in args.elevations.split(","))
    spec = ViewSpec(elevations=elevations, azimuth_step=args.azimuth_step,
                    n_azimuths=args.n_azimuths, image_size=args.size,
                    radius=args.radius)
    manifest = generate_dataset(entries, spec, args.out, seed=args.seed)
    print(f"wrote {len(manifest['views'])} views, {len(manifest['pairs'])} pairs "
          f"to {args.out} (train={len(manifest['split']['train'])} "
          f"test={len(manifest['split']['test'])} meshes)")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_config(args) -> TrainConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = TrainConfig.from_json(json.load(fh))
    else:
        cfg = TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.steps = args.steps
    if args.loss is not None:
        if args.loss not in LOSS_PRESETS:
            raise ParameterError(f"unknown --loss {args.loss!r}; have {sorted(LOSS_PRESETS)}")
        cfg.loss_preset = args.loss
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = PairDataset(args.data)
    if args.stage == "perceptual":
        path = pretrain_perceptual(data, cfg, args.out)
    elif args.stage == "doafn":
        path = train_doafn(data, cfg, args.out, resume=args.resume)
    elif args.stage == "completion":
        if not args.doafn_ckpt:
            raise StateError(
                "completion stage requires --doafn-ckpt (run the doafn stage first)"
            )
        path = train_completion(data, cfg, args.out, args.doafn_ckpt,
                                perceptual_ckpt=args.perceptual_ckpt,
                                resume=args.resume)
    else:  # baseline
        path = train_baseline(data, cfg, args.out,
                              perceptual_ckpt=args.perceptual_ckpt)
    print(f"stage {args.stage} finished; checkpoint {path}")
    return 0


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


def _load_synth_bundle(ckpt):
    bundle = load_checkpoint(ckpt)
    if bundle.doafn is None or bundle.completion is None:
        raise StateError(f"checkpoint {ckpt} lacks doafn+completion nets")
    return bundle


def _background_mask_for(args, bundle, img):
    """GT mask file > learned bg head > near-white heuristic (white renders)."""
    if getattr(args, "bg_mask", None):
        m = tensorio.load_mask(args.bg_mask)
        return (m > 0.5).astype(np.float32)[None, None]
    if "head_bg.w" in bundle.doafn:
        return None  # the model's own head fills in
    white = np.all(img > 245.0 / 255.0, axis=2)
    return white.astype(np.float32)[None, None]


def _synthesize(bundle, img: np.ndarray, theta: float, m_bg):
    desc = bundle.desc
    s = desc.image_size
    if img.shape != (s, s, 3):
        raise ShapeError(f"input image {img.shape} does not match model size {(s, s, 3)}")
    i_s = Tensor(img.transpose(2, 0, 1)[None].astype(np.float32))
    enc = Tensor(encode_transform(theta).t[None])
    m = None if m_bg is None else Tensor(m_bg)
    dout = doafn_forward(bundle.doafn, desc, i_s, enc, m)
    out = completion_forward(bundle.completion, desc, dout)
    return dout, out.data[0].transpose(1, 2, 0)


def _flow_magnitude_image(dout) -> np.ndarray:
    flow = dout.flow.data[0]  # (2,H,W) pixel coords
    h, w = flow.shape[1:]
    ii, jj = np.mgrid[0:h, 0:w]
    mag = np.hypot(flow[0] - ii, flow[1] - jj)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def cmd_synth(args) -> int:
    if not (THETA_RANGE[0] <= args.theta <= THETA_RANGE[1]):
        raise ParameterError(
            f"theta {args.theta} outside valid range [{THETA_RANGE[0]}, {THETA_RANGE[1]}]"
        )
    bundle = _load_synth_bundle(args.ckpt)
    img = tensorio.load_image(args.input)
    m_bg = _background_mask_for(args, bundle, img)
    dout, out = _synthesize(bundle, img, args.theta, m_bg)
    outp = Path(args.out)
    outp.parent.mkdir(parents=True, exist_ok=True)
    tensorio.save_image(outp, out)
    if args.dump_intermediates:
        stem = outp.with_suffix("")
        tensorio.save_mask(f"{stem}_vis.png", dout.vis_pred.data[0, 0])
        tensorio.save_image(f"{stem}_doafn.png",
                            np.clip(dout.i_doafn.data[0].transpose(1, 2, 0), 0, 1))
        tensorio.save_image(f"{stem}_afn.png",
                            np.clip(dout.i_afn.data[0].transpose(1, 2, 0), 0, 1))
        tensorio.save_mask(f"{stem}_flow.png", _flow_magnitude_image(dout))
    print(f"synthesized theta={args.theta} -> {args.out}")
    return 0


def cmd_rotate360(args) -> int:
    if args.step < 20 or 360 % args.step:
        raise ParameterError(f"step {args.step} must divide 360 and be >= 20")
    if args.step % 20:
        raise ParameterError(f"step {args.step} must be a multiple of 20 "
                             f"(encodable range [{THETA_RANGE[0]}, {THETA_RANGE[1]}])")
    bundle = _load_synth_bundle(args.ckpt)
    img = tensorio.load_image(args.input)
    m_bg = _background_mask_for(args, bundle, img)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    thetas = list(range(args.step, 360, args.step))
    for theta in thetas:
        _, out = _synthesize(bundle, img, theta, m_bg)
        tensorio.save_image(outdir / f"theta_{theta:03d}.png", out)
    print(f"wrote {len(thetas)} views to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _predict_batch(bundle, data: PairDataset, indices):
    arrays = data.batch(indices)
    from .training import encode_batch  # local import to avoid cycle at module load

    dout = doafn_forward(bundle.doafn, bundle.desc, Tensor(arrays["i_s"]),
                         Tensor(encode_batch(arrays["theta"])),
                         Tensor(arrays["m_bg"]))
    out = completion_forward(bundle.completion, bundle.desc, dout)
    return out.data.transpose(0, 2, 3, 1), arrays["i_t"].transpose(0, 2, 3, 1)


def cmd_eval(args) -> int:
    t0 = time.time()
    validate_manifest(args.data)
    data = PairDataset(args.data)
    indices = data.pair_indices(args.split)
    bundle = None
    if args.predictor == "model":
        if not args.ckpt:
            raise StateError("eval with the model predictor requires --ckpt")
        bundle = _load_synth_bundle(args.ckpt)

    def triples():
        for start in range(0, len(indices), 8):
            chunk = indices[start : start + 8]
            if args.predictor == "model":
                preds, targets = _predict_batch(bundle, data, chunk)
            else:
                targets = data.batch(chunk)["i_t"].transpose(0, 2, 3, 1)
                if args.predictor == "gt":
                    preds = targets
                else:  # constant mid-gray
                    preds = np.full_like(targets, 0.5)
            for k, i in enumerate(chunk):
                yield data.pairs[i], preds[k], targets[k]

    report = evaluate_pairs(triples(), config={
        "data": str(args.data), "split": args.split, "predictor": args.predictor,
        "ckpt": args.ckpt,
    })
    report.runtime_s = time.time() - t0
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_report(report, outdir / "report.json", outdir / "report.csv")
    print(f"eval[{args.predictor}] split={args.split} pairs={len(report.per_pair)} "
          f"L1={report.mean_l1:.4f} SSIM={report.mean_ssim:.4f}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.ops == "all":
        names = sorted(REGISTRY)
    else:
        names = args.ops.split(",")
        for n in names:
            if n not in REGISTRY:
                raise ParameterError(
                    f"unregistered op {n!r}; registry has {sorted(REGISTRY)}"
                )
    failed = 0
    for name in names:
        err = grad_check(name, seed=args.seed)
        tol = tolerance_for(name)
        ok = err < tol
        failed += 0 if ok else 1
        print(f"{name:24s} max_rel={err:.3e} tol={tol:.0e} {'PASS' if ok else 'FAIL'}")
    if failed:
        print(f"{failed}/{len(names)} ops failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser / entry
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viewsynth",
                                description="geometry-grounded view synthesis pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a procedural multi-view dataset")
    g.add_argument("--kind", default="car-like",
                   choices=list(PROCEDURAL_KINDS) + ["mixed"])
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)
    g.add_argument("--elevations", default="0,10,20")
    g.add_argument("--azimuth-step", type=int, default=20)
    g.add_argument("--n-azimuths", type=int, default=None)
    g.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", required=True,
                   choices=["perceptual", "doafn", "completion", "baseline"])
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="TrainConfig JSON file")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--loss", default=None, help=f"preset: {sorted(LOSS_PRESETS)}")
    t.add_argument("--doafn-ckpt", default=None)
    t.add_argument("--perceptual-ckpt", default=None)
    t.add_argument("--resume", default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesize a rotated view of one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bg-mask", default=None,
                   help="ground-truth unified background mask PNG")
    s.add_argument("--dump-intermediates", action="store_true")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("rotate360", help="sweep a full turn at fixed step")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--step", type=int, default=20)
    r.add_argument("--out", required=True)
    r.add_argument("--bg-mask", default=None)
    r.set_defaults(func=cmd_rotate360)

    e = sub.add_parser("eval", help="L1/SSIM report over a dataset split")
    e.add_argument("--ckpt", default=None)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", required=True)
    e.add_argument("--predictor", default="model", choices=["model", "gt", "gray"])
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of all ops")
    c.add_argument("--ops", default="all")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
