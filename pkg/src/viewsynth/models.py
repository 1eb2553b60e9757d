"""Network definitions and checkpointing.

Five parameter sets share one descriptor:

  * flow network: encoder -> bottleneck (+ transformation embedding) ->
    decoder with a flow head (tanh, mapped to pixel coordinates) and a
    visibility head (sigmoid); output composited with the warped source.
  * completion network: hourglass over the composite with skip connections
    from each encoder scale and the flow network's bottleneck vector
    injected at its own bottleneck.
  * discriminator: strided conv stack -> scalar logit, with feature taps
    after blocks 1-3 for feature matching.
  * perceptual feature extractor: 3 conv blocks, locally pretrained on an
    azimuth-bin classification task and then frozen.
  * baseline: the flow network's trunk with a single RGB head (no flow, no
    visibility, no completion stage).

Parameters live in flat name->Tensor dicts; the architecture descriptor
alone determines every shape, so models can be constructed without data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import parameter
from .errors import ParameterError, ShapeError, StateError
from .tensorio import read_tensors, write_tensors

N_BINS = 17  # azimuth deltas 20..340 in steps of 20


@dataclass(frozen=True)
class ArchDescriptor:
    image_size: int = 64
    base_widths: tuple = (16, 32, 64, 128)
    bottleneck: int = 512
    embed_dim: int = 128
    n_transform_bins: int = N_BINS
    leaky_slope: float = 0.2
    predict_bg_mask: bool = False
    vis_supervision: str = "svis"  # or "vis"

    @property
    def enc_widths(self) -> tuple:
        """Strided blocks down to a 4x4 bottleneck; deeper sizes repeat the
        widest block (the 256px variant doubles the depth this way)."""
        n_down = int(np.log2(self.image_size // 4))
        if 2 ** n_down * 4 != self.image_size:
            raise ParameterError(f"image size {self.image_size} must be 4*2^k")
        if n_down < len(self.base_widths):
            raise ParameterError(
                f"image size {self.image_size} too small for {len(self.base_widths)} blocks"
            )
        return self.base_widths + (self.base_widths[-1],) * (n_down - len(self.base_widths))

    @property
    def bottleneck_hw(self) -> int:
        return self.image_size // (2 ** len(self.enc_widths))

    @property
    def bottleneck_flat(self) -> int:
        return self.enc_widths[-1] * self.bottleneck_hw ** 2

    def to_json(self) -> str:
        d = asdict(self)
        d["base_widths"] = list(self.base_widths)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "ArchDescriptor":
        d = json.loads(blob)
        d["base_widths"] = tuple(d["base_widths"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------


def _he(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0):
    return (rng.normal(size=shape) * gain * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _add_conv(p, rng, name, cin, cout, k, norm=True, gain=1.0):
    p[f"{name}.w"] = parameter(_he(rng, (cout, cin, k, k), cin * k * k, gain), name=f"{name}.w")
    p[f"{name}.b"] = parameter(np.zeros(cout, np.float32), name=f"{name}.b")
    if norm:
        p[f"{name}.g"] = parameter(np.ones(cout, np.float32), name=f"{name}.g")
        p[f"{name}.beta"] = parameter(np.zeros(cout, np.float32), name=f"{name}.beta")


def _add_convt(p, rng, name, cin, cout, k, norm=True, gain=1.0):
    p[f"{name}.w"] = parameter(_he(rng, (cin, cout, k, k), cin * k * k, gain), name=f"{name}.w")
    p[f"{name}.b"] = parameter(np.zeros(cout, np.float32), name=f"{name}.b")
    if norm:
        p[f"{name}.g"] = parameter(np.ones(cout, np.float32), name=f"{name}.g")
        p[f"{name}.beta"] = parameter(np.zeros(cout, np.float32), name=f"{name}.beta")


def _add_linear(p, rng, name, din, dout, gain=1.0):
    p[f"{name}.w"] = parameter(_he(rng, (dout, din), din, gain), name=f"{name}.w")
    p[f"{name}.b"] = parameter(np.zeros(dout, np.float32), name=f"{name}.b")


def _trunk_params(p, rng, desc: ArchDescriptor):
    cin = 3
    for i, w in enumerate(desc.enc_widths, start=1):
        _add_conv(p, rng, f"enc{i}", cin, w, 4)
        cin = w
    _add_linear(p, rng, "fc_enc", desc.bottleneck_flat, desc.bottleneck)
    _add_linear(p, rng, "embed", desc.n_transform_bins, desc.embed_dim)
    _add_linear(p, rng, "fc_dec", desc.bottleneck + desc.embed_dim, desc.bottleneck_flat)
    widths = list(desc.enc_widths)[::-1]  # e.g. 128 -> 64 -> 32 -> 16
    outs = widths[1:] + [widths[-1]]
    cin = widths[0]
    for i, w in enumerate(outs, start=1):
        _add_convt(p, rng, f"dec{i}", cin, w, 4)
        cin = w
    return cin


def init_doafn(desc: ArchDescriptor, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    feat = _trunk_params(p, rng, desc)
    _add_conv(p, rng, "head_flow", feat, 2, 3, norm=False, gain=0.1)
    _add_conv(p, rng, "head_vis", feat, 1, 3, norm=False, gain=0.1)
    if desc.predict_bg_mask:
        _add_conv(p, rng, "head_bg", feat, 1, 3, norm=False, gain=0.1)
    return p


def init_completion(desc: ArchDescriptor, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    cin = 3
    for i, w in enumerate(desc.enc_widths, start=1):
        _add_conv(p, rng, f"enc{i}", cin, w, 4)
        cin = w
    _add_linear(p, rng, "fc_enc", desc.bottleneck_flat, desc.bottleneck)
    _add_linear(p, rng, "fc_dec", 2 * desc.bottleneck, desc.bottleneck_flat)
    widths = list(desc.enc_widths)[::-1]
    outs = widths[1:] + [widths[-1]]
    cin = widths[0]
    for i, (w, skip) in enumerate(zip(outs, widths[1:] + [0]), start=1):
        _add_convt(p, rng, f"dec{i}", cin, w, 4)
        _add_conv(p, rng, f"fuse{i}", w + skip, w, 3)
        cin = w
    _add_conv(p, rng, "head", cin, 3, 3, norm=False, gain=0.1)
    return p


def init_discriminator(desc: ArchDescriptor, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    cin = 3
    for i, w in enumerate(desc.enc_widths, start=1):
        _add_conv(p, rng, f"d{i}", cin, w, 4, norm=(i > 1))  # no norm on block 1
        cin = w
    _add_linear(p, rng, "fc", desc.bottleneck_flat, 1)
    return p


PERC_WIDTHS = (16, 32, 64)


def init_perceptual(desc: ArchDescriptor, rng: np.random.Generator,
                    trainable: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    _add_conv(p, rng, "p1", 3, PERC_WIDTHS[0], 3, norm=False)
    _add_conv(p, rng, "p2", PERC_WIDTHS[0], PERC_WIDTHS[1], 4, norm=False)
    _add_conv(p, rng, "p3", PERC_WIDTHS[1], PERC_WIDTHS[2], 4, norm=False)
    if not trainable:
        freeze(p)
    return p


def init_perceptual_head(desc: ArchDescriptor, rng: np.random.Generator,
                         n_classes: int) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    _add_linear(p, rng, "cls", PERC_WIDTHS[-1], n_classes)
    return p


def init_baseline(desc: ArchDescriptor, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    feat = _trunk_params(p, rng, desc)
    _add_conv(p, rng, "head", feat, 3, 3, norm=False, gain=0.1)
    return p


def freeze(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.requires_grad = False


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _conv_block(p, name, x, stride=2, pad=1, act="relu", slope=0.2):
    y = ops.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, pad=pad)
    if f"{name}.g" in p:
        y = ops.instance_norm(y, p[f"{name}.g"], p[f"{name}.beta"])
    if act == "relu":
        y = ops.relu(y)
    elif act == "lrelu":
        y = ops.leaky_relu(y, slope)
    return y


def _convt_block(p, name, x, stride=2, pad=1):
    y = ops.conv_transpose2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, pad=pad)
    if f"{name}.g" in p:
        y = ops.instance_norm(y, p[f"{name}.g"], p[f"{name}.beta"])
    return ops.relu(y)


def _check_image(desc: ArchDescriptor, img: Tensor, what: str):
    s = desc.image_size
    if img.ndim != 4 or img.shape[1] != 3 or img.shape[2:] != (s, s):
        raise ShapeError(
            f"{what} shape {img.shape} does not match model input (N,3,{s},{s})"
        )


def _trunk_forward(p, desc: ArchDescriptor, i_s: Tensor, t: Tensor):
    _check_image(desc, i_s, "input image")
    if t.ndim != 2 or t.shape[1] != desc.n_transform_bins:
        raise ShapeError(
            f"transform encoding shape {t.shape} vs expected (N,{desc.n_transform_bins})"
        )
    x = i_s
    for i in range(1, len(desc.enc_widths) + 1):
        x = _conv_block(p, f"enc{i}", x)
    n = x.shape[0]
    flat = ops.reshape(x, (n, desc.bottleneck_flat))
    bott = ops.relu(ops.linear(flat, p["fc_enc.w"], p["fc_enc.b"]))
    emb = ops.relu(ops.linear(t, p["embed.w"], p["embed.b"]))
    z = ops.relu(ops.linear(ops.concat([bott, emb], axis=1),
                            p["fc_dec.w"], p["fc_dec.b"]))
    hw = desc.bottleneck_hw
    x = ops.reshape(z, (n, desc.enc_widths[-1], hw, hw))
    for i in range(1, len(desc.enc_widths) + 1):
        x = _convt_block(p, f"dec{i}", x)
    return x, bott


@dataclass
class DoafnOutput:
    """Intermediate synthesis state handed to the completion network."""

    flow: Tensor        # (N,2,H,W) pixel coordinates into the source image
    vis_logit: Tensor   # (N,1,H,W)
    vis_pred: Tensor    # sigmoid(vis_logit), strictly inside (0,1)
    bottleneck: Tensor  # (N,bottleneck)
    i_afn: Tensor       # raw warped source
    i_doafn: Tensor     # composited intermediate image
    bg_pred: Tensor | None = None

    def detached(self) -> "DoafnOutput":
        return DoafnOutput(
            flow=self.flow.detach(), vis_logit=self.vis_logit.detach(),
            vis_pred=self.vis_pred.detach(), bottleneck=self.bottleneck.detach(),
            i_afn=self.i_afn.detach(), i_doafn=self.i_doafn.detach(),
            bg_pred=None if self.bg_pred is None else self.bg_pred.detach(),
        )


def doafn_forward(params: dict[str, Tensor], desc: ArchDescriptor, i_s: Tensor,
                  t: Tensor, m_bg: Tensor | None = None) -> DoafnOutput:
    """Predict flow + visibility, warp the source, and composite.

    The background mask is ground truth when available (synthetic data);
    with `predict_bg_mask` the network's own head fills in when m_bg is None.
    """
    feat, bott = _trunk_forward(params, desc, i_s, t)
    flow_n = ops.tanh(ops.conv2d(feat, params["head_flow.w"], params["head_flow.b"],
                                 stride=1, pad=1))
    # [-1,1] -> pixel coordinates (square images: same map for y and x)
    flow_px = ops.scale(ops.add_scalar(flow_n, 1.0), (desc.image_size - 1) / 2.0)
    vis_logit = ops.conv2d(feat, params["head_vis.w"], params["head_vis.b"],
                           stride=1, pad=1)
    vis_pred = ops.sigmoid(vis_logit)
    bg_pred = None
    if m_bg is None:
        if "head_bg.w" not in params:
            raise StateError(
                "background mask required: model has no bg head and none was provided"
            )
        bg_logit = ops.conv2d(feat, params["head_bg.w"], params["head_bg.b"],
                              stride=1, pad=1)
        bg_pred = ops.sigmoid(bg_logit)
        m_bg = bg_pred
    i_afn = ops.bilinear_sample(i_s, flow_px)
    i_doafn = ops.add(ops.mul(i_s, m_bg), ops.mul(i_afn, vis_pred))
    return DoafnOutput(flow=flow_px, vis_logit=vis_logit, vis_pred=vis_pred,
                       bottleneck=bott, i_afn=i_afn, i_doafn=i_doafn, bg_pred=bg_pred)


def completion_forward(params: dict[str, Tensor], desc: ArchDescriptor,
                       dout: DoafnOutput) -> Tensor:
    """Hourglass over the composite; skip connections carry each encoder
    scale to the mirrored decoder scale and the flow-network bottleneck is
    concatenated at the hourglass bottleneck (identity-mapping path)."""
    x = dout.i_doafn
    _check_image(desc, x, "composite image")
    taps = []
    for i in range(1, len(desc.enc_widths) + 1):
        x = _conv_block(params, f"enc{i}", x)
        taps.append(x)
    n = x.shape[0]
    flat = ops.reshape(x, (n, desc.bottleneck_flat))
    own = ops.relu(ops.linear(flat, params["fc_enc.w"], params["fc_enc.b"]))
    z = ops.relu(ops.linear(ops.concat([own, dout.bottleneck], axis=1),
                            params["fc_dec.w"], params["fc_dec.b"]))
    hw = desc.bottleneck_hw
    x = ops.reshape(z, (n, desc.enc_widths[-1], hw, hw))
    n_dec = len(desc.enc_widths)
    for i in range(1, n_dec + 1):
        x = _convt_block(params, f"dec{i}", x)
        skip_idx = n_dec - 1 - i  # taps index of the matching encoder scale
        if skip_idx >= 0:
            x = ops.concat([x, taps[skip_idx]], axis=1)
        x = _conv_block(params, f"fuse{i}", x, stride=1, pad=1)
    out = ops.conv2d(x, params["head.w"], params["head.b"], stride=1, pad=1)
    return ops.sigmoid(out)


def discriminator_forward(params: dict[str, Tensor], desc: ArchDescriptor,
                          img: Tensor):
    """Returns (logit, [features after blocks 1..3])."""
    _check_image(desc, img, "discriminator input")
    x = img
    feats = []
    for i in range(1, len(desc.enc_widths) + 1):
        x = _conv_block(params, f"d{i}", x, act="lrelu", slope=desc.leaky_slope)
        if i <= 3:
            feats.append(x)
    n = x.shape[0]
    flat = ops.reshape(x, (n, desc.bottleneck_flat))
    logit = ops.linear(flat, params["fc.w"], params["fc.b"])
    return logit, feats


def perceptual_features(params: dict[str, Tensor] | None, desc: ArchDescriptor,
                        img: Tensor):
    """Three feature taps from the frozen loss network."""
    if not params:
        raise StateError("perceptual weights not loaded; run the perceptual stage first")
    _check_image(desc, img, "perceptual input")
    f1 = ops.relu(ops.conv2d(img, params["p1.w"], params["p1.b"], stride=1, pad=1))
    f2 = ops.relu(ops.conv2d(f1, params["p2.w"], params["p2.b"], stride=2, pad=1))
    f3 = ops.relu(ops.conv2d(f2, params["p3.w"], params["p3.b"], stride=2, pad=1))
    return [f1, f2, f3]


def perceptual_logits(params, head, desc: ArchDescriptor, img: Tensor) -> Tensor:
    """Classifier head over globally pooled top features (pretraining only)."""
    f3 = perceptual_features(params, desc, img)[-1]
    pooled = ops.mean_spatial(f3)
    return ops.linear(pooled, head["cls.w"], head["cls.b"])


def baseline_forward(params: dict[str, Tensor], desc: ArchDescriptor,
                     i_s: Tensor, t: Tensor) -> Tensor:
    """Single-stage encoder-decoder: image in, image out, no flow machinery."""
    feat, _ = _trunk_forward(params, desc, i_s, t)
    out = ops.conv2d(feat, params["head.w"], params["head.b"], stride=1, pad=1)
    return ops.sigmoid(out)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


@dataclass
class ModelBundle:
    desc: ArchDescriptor
    doafn: dict[str, Tensor] | None = None
    completion: dict[str, Tensor] | None = None
    discriminator: dict[str, Tensor] | None = None
    perceptual: dict[str, Tensor] | None = None
    baseline: dict[str, Tensor] | None = None
    meta: dict = field(default_factory=dict)

    def nets(self) -> dict[str, dict[str, Tensor]]:
        out = {}
        for name in ("doafn", "completion", "discriminator", "perceptual", "baseline"):
            params = getattr(self, name)
            if params is not None:
                out[name] = params
        return out


def save_checkpoint(path_base, nets: dict[str, dict[str, Tensor]],
                    desc: ArchDescriptor, meta: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> str:
    """Write `<base>.tvsn` (named parameter entries like "doafn.enc1.w")
    plus `<base>.json` (descriptor, net list, metadata)."""
    path_base = str(path_base)
    entries: dict[str, np.ndarray] = {}
    for net, params in nets.items():
        for name, tensor in params.items():
            entries[f"{net}.{name}"] = tensor.data
    if extra:
        entries.update(extra)
    write_tensors(path_base + ".tvsn", entries)
    sidecar = {
        "descriptor": json.loads(desc.to_json()),
        "nets": sorted(nets),
        "meta": meta or {},
    }
    with open(path_base + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
    return path_base


def load_checkpoint(path_base) -> ModelBundle:
    path_base = str(path_base)
    try:
        entries = read_tensors(path_base + ".tvsn")
        with open(path_base + ".json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError as exc:
        raise StateError(f"checkpoint not found: {path_base}(.tvsn/.json)") from exc
    desc = ArchDescriptor.from_json(json.dumps(sidecar["descriptor"]))
    bundle = ModelBundle(desc=desc, meta=sidecar.get("meta", {}))
    for net in sidecar["nets"]:
        prefix = net + "."
        params = {
            name[len(prefix):]: parameter(arr, name=name)
            for name, arr in entries.items()
            if name.startswith(prefix) and not name.startswith(("opt.", "rng."))
        }
        if net == "perceptual":
            freeze(params)
        setattr(bundle, net, params)
    bundle.meta["extra_entries"] = {
        k: v for k, v in entries.items() if k.startswith(("opt.", "rng."))
    }
    return bundle
