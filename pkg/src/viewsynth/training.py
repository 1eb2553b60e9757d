"""Transformation encoding, loss assembly, and the staged training loops.

Stages: (1) perceptual extractor pretraining on azimuth-bin classification,
(2) flow+visibility network under masked-L1 + visibility BCE, (3) completion
network adversarially against a discriminator (two generator updates per
discriminator update), with the flow network frozen. An optional joint
fine-tune of stages 2+3 sits behind a flag, off by default.

Determinism contract: one RNG drives init and batch sampling; its state is
saved in every checkpoint, so resumed runs reproduce uninterrupted ones
bitwise, and the loss trace of a short run is a prefix of a longer one.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .autodiff import Adam, LrSchedule, Tensor, backward, ops
from .dataset import PairDataset
from .errors import ParameterError, StateError
from .models import (ArchDescriptor, DoafnOutput, ModelBundle, baseline_forward,
                     completion_forward, discriminator_forward, doafn_forward,
                     freeze, init_baseline, init_completion, init_discriminator,
                     init_doafn, init_perceptual, init_perceptual_head,
                     load_checkpoint, perceptual_features, perceptual_logits,
                     save_checkpoint)

THETA_MIN, THETA_MAX, THETA_STEP = 20, 340, 20


# ---------------------------------------------------------------------------
# transformation encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformEncoding:
    theta: float
    t: np.ndarray  # (17,) in [0,1], sums to 1, at most 2 adjacent nonzeros
    step: int = THETA_STEP


def encode_transform(theta: float) -> TransformEncoding:
    """One-hot at multiples of 20 degrees; adjacent-bin linear interpolation
    in between. Position k encodes angle 20*(k+1); 0 degrees is excluded."""
    theta = float(theta)
    if not np.isfinite(theta) or theta < THETA_MIN or theta > THETA_MAX:
        raise ParameterError(
            f"transformation angle {theta} outside [{THETA_MIN}, {THETA_MAX}]"
        )
    t = np.zeros(models.N_BINS, np.float32)
    i = int(theta // THETA_STEP)  # angle i*20 <= theta < (i+1)*20
    frac = (theta - i * THETA_STEP) / THETA_STEP
    if frac == 0.0:
        t[i - 1] = 1.0
    else:
        t[i - 1] = 1.0 - frac
        t[i] = frac
    return TransformEncoding(theta=theta, t=t)


def encode_batch(thetas) -> np.ndarray:
    return np.stack([encode_transform(th).t for th in np.atleast_1d(thetas)])


def decode_transform(t: np.ndarray) -> int:
    """Angle of the strongest bin (ties resolve to the lower angle)."""
    return (int(np.argmax(t)) + 1) * THETA_STEP


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    """Generator loss weights: adversarial, feature matching (alpha),
    perceptual (beta), pixel L1 (gamma), total variation (lam)."""

    adv: float = 1.0
    alpha: float = 100.0
    beta: float = 0.001
    gamma: float = 1.0
    lam: float = 0.0001
    # literal reading of the pixel term (compares input to target and is
    # constant in the generator); kept switchable, off by default
    l1_against_input: bool = False


LOSS_PRESETS = {
    "l1": LossWeights(adv=0, alpha=0, beta=0, gamma=1, lam=0),
    "vgg": LossWeights(adv=0, alpha=0, beta=0.001, gamma=0, lam=0.0001),
    "adv": LossWeights(adv=1, alpha=100, beta=0, gamma=0, lam=0),
    "vgg_adv": LossWeights(adv=1, alpha=100, beta=0.001, gamma=0, lam=0.0001),
    "full": LossWeights(),
}


def feature_distance(fa: list[Tensor], fb: list[Tensor]) -> Tensor:
    """Size-normalized euclidean distance over concatenated flattened taps."""
    a = ops.concat([ops.reshape(f, (f.shape[0], -1)) for f in fa], axis=1)
    b = ops.concat([ops.reshape(f, (f.shape[0], -1)) for f in fb], axis=1)
    return ops.feature_l2(a, b)


def _ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones(t.shape, np.float32))


def _zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros(t.shape, np.float32))


def generator_loss(i_s: Tensor, g_out: Tensor, i_t: Tensor,
                   disc: dict | None, perc: dict | None,
                   desc: ArchDescriptor, w: LossWeights):
    """Returns (total tensor, term dict); zero-weight terms are skipped, so
    e.g. a VGG+L1 ablation runs without any discriminator."""
    total = None
    terms = {"adv": 0.0, "fm": 0.0, "vgg": 0.0, "l1": 0.0, "tv": 0.0}

    def acc(term: Tensor, weight: float, name: str):
        nonlocal total
        terms[name] = float(term.data)
        scaled = ops.scale(term, weight) if weight != 1.0 else term
        total = scaled if total is None else ops.add(total, scaled)

    if w.adv > 0 or w.alpha > 0:
        if disc is None:
            raise StateError("generator loss needs a discriminator for adv/fm terms")
        logit_fake, feats_fake = discriminator_forward(disc, desc, g_out)
        if w.adv > 0:
            acc(ops.bce_with_logit(logit_fake, _ones_like(logit_fake)), w.adv, "adv")
        if w.alpha > 0:
            _, feats_real = discriminator_forward(disc, desc, i_t)
            acc(feature_distance(feats_fake, [f.detach() for f in feats_real]),
                w.alpha, "fm")
    if w.beta > 0:
        if perc is None:
            raise StateError("generator loss needs perceptual weights for the vgg term")
        acc(feature_distance(perceptual_features(perc, desc, g_out),
                             perceptual_features(perc, desc, i_t)), w.beta, "vgg")
    if w.gamma > 0:
        ref = i_s if w.l1_against_input else g_out
        acc(ops.l1_loss(ref, i_t), w.gamma, "l1")
    if w.lam > 0:
        acc(ops.tv_loss(g_out), w.lam, "tv")
    if total is None:
        raise ParameterError("all loss weights are zero")
    return total, terms


def discriminator_loss(i_real: Tensor, i_fake: Tensor, disc: dict,
                       desc: ArchDescriptor):
    """Stabilized cross-entropy on real/fake logits."""
    if disc is None:
        raise StateError("discriminator loss requires discriminator weights")
    logit_real, _ = discriminator_forward(disc, desc, i_real)
    logit_fake, _ = discriminator_forward(disc, desc, i_fake)
    real_term = ops.bce_with_logit(logit_real, _ones_like(logit_real))
    fake_term = ops.bce_with_logit(logit_fake, _zeros_like(logit_fake))
    total = ops.add(real_term, fake_term)
    return total, {"real": float(real_term.data), "fake": float(fake_term.data)}


def doafn_loss(dout: DoafnOutput, i_t: Tensor, m_gt: Tensor, m_vis_target: Tensor,
               rec_weight: float = 1.0, vis_weight: float = 0.1):
    """Masked L1 reconstruction of the composite plus visibility BCE; there
    is no direct flow supervision (the warp learns through the pixels)."""
    if m_gt is None or m_vis_target is None:
        raise ParameterError("doafn loss needs ground-truth masks")
    rec = ops.l1_loss(ops.mul(dout.i_doafn, m_gt), ops.mul(i_t, m_gt))
    vis = ops.bce_with_logit(dout.vis_logit, m_vis_target)
    total = ops.add(ops.scale(rec, rec_weight), ops.scale(vis, vis_weight))
    return total, {"rec": float(rec.data), "vis": float(vis.data)}


# ---------------------------------------------------------------------------
# training configuration and loop plumbing
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 3000
    batch_doafn: int = 8
    batch_completion: int = 4
    lr: float = 1e-4
    lr_after: float = 1e-5
    lr_drop_step: int = 10_000
    gen_per_cycle: int = 2
    disc_per_cycle: int = 1
    checkpoint_every: int = 500
    weights: LossWeights = field(default_factory=LossWeights)
    rec_loss_weight: float = 1.0
    vis_loss_weight: float = 0.1
    vis_supervision: str = "svis"   # which GT map supervises the vis head
    predict_bg_mask: bool = False
    joint_finetune: bool = False
    joint_steps: int = 300
    disc_real_source: str = "target"  # "source" = literal Eq-8 reading
    loss_preset: str | None = None
    perceptual_steps: int = 2000
    perceptual_batch: int = 16
    perceptual_target_acc: float = 0.8

    def resolved_weights(self) -> LossWeights:
        if self.loss_preset is None:
            return self.weights
        try:
            return LOSS_PRESETS[self.loss_preset]
        except KeyError:
            raise ParameterError(
                f"unknown loss preset {self.loss_preset!r}; have {sorted(LOSS_PRESETS)}"
            )

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


class _RunLog:
    def __init__(self, path, resume: bool):
        self.fh = open(path, "a" if resume else "w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _copy_params(dst: dict[str, Tensor], entries: dict[str, Tensor]) -> None:
    for k, t in dst.items():
        t.data[...] = entries[k].data.reshape(t.shape)


def _vis_target_key(cfg: TrainConfig) -> str:
    if cfg.vis_supervision not in ("svis", "vis"):
        raise ParameterError(f"vis_supervision must be svis|vis, got {cfg.vis_supervision}")
    return "m_svis" if cfg.vis_supervision == "svis" else "m_vis"


# ---------------------------------------------------------------------------
# stage: perceptual pretraining
# ---------------------------------------------------------------------------


def pretrain_perceptual(data: PairDataset, cfg: TrainConfig, out_dir) -> str:
    """Train the 3-block extractor + a temporary classifier head to sort
    views into azimuth bins, then drop the head and freeze the extractor."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bins = data.azimuth_bins()
    if len(bins) < 2:
        raise ParameterError(f"need >= 2 azimuth bins to pretrain, have {len(bins)}")
    labeled = data.labeled_views("train")
    desc = ArchDescriptor(image_size=data.image_size)
    rng = np.random.default_rng(cfg.seed)
    feat = init_perceptual(desc, rng)
    head = init_perceptual_head(desc, rng, len(bins))
    joint = {f"feat.{k}": v for k, v in feat.items()}
    joint.update({f"head.{k}": v for k, v in head.items()})
    opt = Adam(joint, LrSchedule(cfg.lr, cfg.lr_after, cfg.lr_drop_step))
    log = _RunLog(out / "train_perceptual.jsonl", resume=False)

    def full_accuracy() -> float:
        hits = 0
        for vid, label in labeled:
            x = Tensor(data.view_rgb(vid)[None])
            logits = perceptual_logits(feat, head, desc, x)
            hits += int(np.argmax(logits.data[0]) == label)
        return hits / len(labeled)

    steps_run = 0
    acc = 0.0
    for step in range(1, cfg.perceptual_steps + 1):
        pick = rng.integers(0, len(labeled), size=cfg.perceptual_batch)
        imgs = np.stack([data.view_rgb(labeled[i][0]) for i in pick])
        labels = np.asarray([labeled[i][1] for i in pick])
        logits = perceptual_logits(feat, head, desc, Tensor(imgs))
        loss = ops.softmax_cross_entropy(logits, labels)
        opt.zero_grad()
        backward(loss)
        opt.step()
        steps_run = step
        if step % 50 == 0 or step == cfg.perceptual_steps:
            acc = full_accuracy()
            log.write({"stage": "perceptual", "step": step,
                       "total": float(loss.data), "train_acc": acc,
                       "wall": time.time()})
            if acc >= cfg.perceptual_target_acc:
                break
    log.close()
    freeze(feat)
    path = save_checkpoint(out / "perceptual_final", {"perceptual": feat}, desc,
                           meta={"steps": steps_run, "train_acc": acc,
                                 "n_bins": len(bins), "seed": cfg.seed})
    return path


# ---------------------------------------------------------------------------
# stage: flow + visibility network
# ---------------------------------------------------------------------------


def train_doafn(data: PairDataset, cfg: TrainConfig, out_dir,
                resume: str | None = None) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    desc = ArchDescriptor(image_size=data.image_size,
                          predict_bg_mask=cfg.predict_bg_mask,
                          vis_supervision=cfg.vis_supervision)
    rng = np.random.default_rng(cfg.seed)
    params = init_doafn(desc, rng)
    opt = Adam(params, LrSchedule(cfg.lr, cfg.lr_after, cfg.lr_drop_step))
    start = 0
    if resume is not None:
        bundle = load_checkpoint(resume)
        _copy_params(params, bundle.doafn)
        start = int(bundle.meta["step"])
        opt.load_state("opt.doafn", bundle.meta["extra_entries"], start)
        rng = _restore_rng(bundle.meta["rng_state"])
    idx = data.pair_indices("train")
    vis_key = _vis_target_key(cfg)
    log = _RunLog(out / "train_doafn.jsonl", resume=resume is not None)

    path = None
    for step in range(start + 1, cfg.steps + 1):
        pick = [idx[j] for j in rng.integers(0, len(idx), size=cfg.batch_doafn)]
        arrays = data.batch(pick)
        dout = doafn_forward(params, desc, Tensor(arrays["i_s"]),
                             Tensor(encode_batch(arrays["theta"])),
                             Tensor(arrays["m_bg"]))
        total, terms = doafn_loss(dout, Tensor(arrays["i_t"]),
                                  Tensor(arrays[vis_key]), Tensor(arrays[vis_key]),
                                  cfg.rec_loss_weight, cfg.vis_loss_weight)
        opt.zero_grad()
        backward(total)
        lr = opt.step()
        log.write({"stage": "doafn", "step": step, "total": float(total.data),
                   "terms": terms, "lr": lr, "wall": time.time()})
        if step % cfg.checkpoint_every == 0 or step == cfg.steps:
            path = save_checkpoint(
                out / f"doafn_{step:06d}", {"doafn": params}, desc,
                meta={"step": step, "stage": "doafn", "rng_state": _rng_state(rng),
                      "config": cfg.to_json()},
                extra=opt.state_tensors("opt.doafn"),
            )
    log.close()
    if path is None:
        raise ParameterError(f"no training steps to run (steps={cfg.steps}, start={start})")
    final = save_checkpoint(out / "doafn_final",
                            {"doafn": params}, desc,
                            meta={"step": cfg.steps, "stage": "doafn",
                                  "rng_state": _rng_state(rng), "config": cfg.to_json()},
                            extra=opt.state_tensors("opt.doafn"))
    return final


# ---------------------------------------------------------------------------
# stage: completion network (adversarial)
# ---------------------------------------------------------------------------


def _frozen_doafn_cache(data: PairDataset, params, desc, indices):
    """With the flow network frozen its outputs per pair are constants, so
    compute them once and reuse across the whole stage."""
    cache = {}
    for i in indices:
        arrays = data.batch([i])
        dout = doafn_forward(params, desc, Tensor(arrays["i_s"]),
                             Tensor(encode_batch(arrays["theta"])),
                             Tensor(arrays["m_bg"]))
        cache[i] = (dout.i_doafn.data[0].copy(), dout.bottleneck.data[0].copy())
    return cache


def train_completion(data: PairDataset, cfg: TrainConfig, out_dir,
                     doafn_ckpt: str, perceptual_ckpt: str | None = None,
                     resume: str | None = None) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if doafn_ckpt is None:
        raise StateError("completion stage requires the doafn stage checkpoint")
    d_bundle = load_checkpoint(doafn_ckpt)
    if d_bundle.doafn is None:
        raise StateError(f"checkpoint {doafn_ckpt} has no doafn net")
    doafn = d_bundle.doafn
    freeze(doafn)
    desc = d_bundle.desc
    weights = cfg.resolved_weights()
    perc = None
    if perceptual_ckpt is not None:
        p_bundle = load_checkpoint(perceptual_ckpt)
        if p_bundle.perceptual is None:
            raise StateError(f"checkpoint {perceptual_ckpt} has no perceptual net")
        perc = p_bundle.perceptual
        freeze(perc)
    elif weights.beta > 0:
        raise StateError("completion stage requires the perceptual stage checkpoint "
                         "(beta > 0)")

    rng = np.random.default_rng(cfg.seed)
    comp = init_completion(desc, rng)
    need_disc = weights.adv > 0 or weights.alpha > 0
    disc = init_discriminator(desc, rng) if need_disc else None
    sched = LrSchedule(cfg.lr, cfg.lr_after, cfg.lr_drop_step)
    opt_g = Adam(comp, sched)
    opt_d = Adam(disc, sched) if need_disc else None
    g_steps = d_steps = 0
    if resume is not None:
        bundle = load_checkpoint(resume)
        _copy_params(comp, bundle.completion)
        if need_disc:
            _copy_params(disc, bundle.discriminator)
        extra = bundle.meta["extra_entries"]
        g_steps = int(bundle.meta["g_steps"])
        d_steps = int(bundle.meta["d_steps"])
        opt_g.load_state("opt.gen", extra, g_steps)
        if need_disc:
            opt_d.load_state("opt.disc", extra, d_steps)
        rng = _restore_rng(bundle.meta["rng_state"])

    idx = data.pair_indices("train")
    cache = _frozen_doafn_cache(data, doafn, desc, idx)
    log = _RunLog(out / "train_completion.jsonl", resume=resume is not None)

    def nets_for_ckpt():
        nets = {"doafn": doafn, "completion": comp}
        if need_disc:
            nets["discriminator"] = disc
        if perc is not None:
            nets["perceptual"] = perc
        return nets

    def save(step_tag: str):
        extra = opt_g.state_tensors("opt.gen")
        if need_disc:
            extra.update(opt_d.state_tensors("opt.disc"))
        return save_checkpoint(
            out / step_tag, nets_for_ckpt(), desc,
            meta={"stage": "completion", "g_steps": g_steps, "d_steps": d_steps,
                  "rng_state": _rng_state(rng), "config": cfg.to_json()},
            extra=extra,
        )

    last_fake = last_real = None
    path = None
    while g_steps < cfg.steps:
        for _ in range(cfg.gen_per_cycle):
            if g_steps >= cfg.steps:
                break
            pick = [idx[j] for j in rng.integers(0, len(idx), size=cfg.batch_completion)]
            arrays = data.batch(pick)
            i_doafn = Tensor(np.stack([cache[i][0] for i in pick]))
            bott = Tensor(np.stack([cache[i][1] for i in pick]))
            stub = DoafnOutput(flow=None, vis_logit=None, vis_pred=None,
                               bottleneck=bott, i_afn=None, i_doafn=i_doafn)
            i_s = Tensor(arrays["i_s"])
            i_t = Tensor(arrays["i_t"])
            g_out = completion_forward(comp, desc, stub)
            total, terms = generator_loss(i_s, g_out, i_t, disc, perc, desc, weights)
            opt_g.zero_grad()
            if need_disc:
                opt_d.zero_grad()
            backward(total)
            lr = opt_g.step()
            g_steps += 1
            last_fake, last_real = g_out.detach(), i_t
            log.write({"stage": "completion", "kind": "gen", "step": g_steps,
                       "total": float(total.data), "terms": terms, "lr": lr,
                       "wall": time.time()})
        if need_disc and last_fake is not None:
            for _ in range(cfg.disc_per_cycle):
                real = last_real if cfg.disc_real_source == "target" else Tensor(
                    arrays["i_s"])
                total_d, terms_d = discriminator_loss(real, last_fake, disc, desc)
                opt_d.zero_grad()
                opt_g.zero_grad()
                backward(total_d)
                lr = opt_d.step()
                d_steps += 1
                log.write({"stage": "completion", "kind": "disc", "step": d_steps,
                           "total": float(total_d.data), "terms": terms_d,
                           "lr": lr, "wall": time.time()})
        if g_steps % cfg.checkpoint_every == 0 or g_steps >= cfg.steps:
            path = save(f"completion_{g_steps:06d}")

    if cfg.joint_finetune and cfg.joint_steps > 0:
        _joint_finetune(data, cfg, desc, doafn, comp, disc, perc, weights, rng,
                        idx, log)
    log.close()
    final = save("completion_final")
    return final


def _joint_finetune(data, cfg, desc, doafn, comp, disc, perc, weights, rng,
                    idx, log):
    """End-to-end fine-tune of flow + completion together (flag-gated)."""
    for t in doafn.values():
        t.requires_grad = True
    joint = {f"d.{k}": v for k, v in doafn.items()}
    joint.update({f"c.{k}": v for k, v in comp.items()})
    sched = LrSchedule(cfg.lr_after, cfg.lr_after, 1)  # fine-tune at the low rate
    opt = Adam(joint, sched)
    for step in range(1, cfg.joint_steps + 1):
        pick = [idx[j] for j in rng.integers(0, len(idx), size=cfg.batch_completion)]
        arrays = data.batch(pick)
        dout = doafn_forward(doafn, desc, Tensor(arrays["i_s"]),
                             Tensor(encode_batch(arrays["theta"])),
                             Tensor(arrays["m_bg"]))
        g_out = completion_forward(comp, desc, dout)
        total, terms = generator_loss(Tensor(arrays["i_s"]), g_out,
                                      Tensor(arrays["i_t"]), disc, perc, desc,
                                      weights)
        opt.zero_grad()
        if disc is not None:
            for t in disc.values():
                t.grad = None
        backward(total)
        opt.step()
        log.write({"stage": "joint", "kind": "gen", "step": step,
                   "total": float(total.data), "terms": terms, "wall": time.time()})
    freeze(doafn)


# ---------------------------------------------------------------------------
# stage: single-stage baseline
# ---------------------------------------------------------------------------


def train_baseline(data: PairDataset, cfg: TrainConfig, out_dir,
                   perceptual_ckpt: str | None = None) -> str:
    """Table-style baseline: one encoder-decoder, selectable loss preset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weights = cfg.resolved_weights()
    desc = ArchDescriptor(image_size=data.image_size)
    perc = None
    if perceptual_ckpt is not None:
        perc = load_checkpoint(perceptual_ckpt).perceptual
        freeze(perc)
    elif weights.beta > 0:
        raise StateError("baseline with a vgg term requires the perceptual checkpoint")
    rng = np.random.default_rng(cfg.seed)
    params = init_baseline(desc, rng)
    need_disc = weights.adv > 0 or weights.alpha > 0
    disc = init_discriminator(desc, rng) if need_disc else None
    sched = LrSchedule(cfg.lr, cfg.lr_after, cfg.lr_drop_step)
    opt_g = Adam(params, sched)
    opt_d = Adam(disc, sched) if need_disc else None
    idx = data.pair_indices("train")
    log = _RunLog(out / "train_baseline.jsonl", resume=False)
    g_steps = d_steps = 0
    while g_steps < cfg.steps:
        for _ in range(cfg.gen_per_cycle):
            if g_steps >= cfg.steps:
                break
            pick = [idx[j] for j in rng.integers(0, len(idx), size=cfg.batch_completion)]
            arrays = data.batch(pick)
            i_s, i_t = Tensor(arrays["i_s"]), Tensor(arrays["i_t"])
            g_out = baseline_forward(params, desc, i_s,
                                     Tensor(encode_batch(arrays["theta"])))
            total, terms = generator_loss(i_s, g_out, i_t, disc, perc, desc, weights)
            opt_g.zero_grad()
            if need_disc:
                opt_d.zero_grad()
            backward(total)
            opt_g.step()
            g_steps += 1
            last_fake, last_real = g_out.detach(), i_t
            log.write({"stage": "baseline", "kind": "gen", "step": g_steps,
                       "total": float(total.data), "terms": terms, "wall": time.time()})
        if need_disc and g_steps <= cfg.steps:
            for _ in range(cfg.disc_per_cycle):
                total_d, _ = discriminator_loss(last_real, last_fake, disc, desc)
                opt_d.zero_grad()
                opt_g.zero_grad()
                backward(total_d)
                opt_d.step()
                d_steps += 1
                log.write({"stage": "baseline", "kind": "disc", "step": d_steps,
                           "total": float(total_d.data), "wall": time.time()})
    log.close()
    nets = {"baseline": params}
    if need_disc:
        nets["discriminator"] = disc
    if perc is not None:
        nets["perceptual"] = perc
    return save_checkpoint(out / "baseline_final", nets, desc,
                           meta={"stage": "baseline", "g_steps": g_steps,
                                 "d_steps": d_steps, "config": cfg.to_json()})
