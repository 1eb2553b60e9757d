"""Central-difference gradient checking against a float64 shadow run.

Each registry entry builds float64 inputs and a forward closure; analytic
gradients come from the tape, numeric ones from central differences of the
same forward (eps defaults to 1e-3, ample at 64-bit). Outputs are reduced
to a scalar through a fixed random projection so every output element gets
weight in the check.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from . import ops
from .tensor import Tensor, backward

DEFAULT_EPS = 1e-3
MAX_COORDS = 300  # coordinates sampled per input


def _t64(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)


def _build_conv2d(rng):
    x = _t64(rng, 2, 3, 6, 6)
    w = _t64(rng, 4, 3, 3, 3)
    b = _t64(rng, 4)
    return [x, w, b], lambda x, w, b: ops.conv2d(x, w, b, stride=2, pad=1)


def _build_conv_transpose2d(rng):
    x = _t64(rng, 2, 4, 4, 4)
    w = _t64(rng, 4, 3, 4, 4)
    b = _t64(rng, 3)
    return [x, w, b], lambda x, w, b: ops.conv_transpose2d(x, w, b, stride=2, pad=1)


def _build_bilinear_sample(rng):
    src = _t64(rng, 2, 3, 7, 7)
    # fractional coordinates away from exact integers (kernel kinks)
    coords = rng.uniform(0.15, 5.85, size=(2, 2, 5, 5))
    coords += np.where(np.abs(coords - np.round(coords)) < 0.05, 0.07, 0.0)
    flow = Tensor(coords, dtype=np.float64)
    return [src, flow], ops.bilinear_sample


def _build_pointwise(kind):
    def build(rng):
        x = Tensor(rng.uniform(0.15, 1.5, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)),
                   dtype=np.float64)
        return [x], lambda x: ops.pointwise(kind, x)

    return build


def _build_instance_norm(rng):
    x = _t64(rng, 2, 3, 5, 5, lo=-2.0, hi=2.0)
    g = _t64(rng, 3, lo=0.5, hi=1.5)
    b = _t64(rng, 3)
    return [x, g, b], ops.instance_norm


def _build_linear(rng):
    x = _t64(rng, 3, 5)
    w = _t64(rng, 4, 5)
    b = _t64(rng, 4)
    return [x, w, b], ops.linear


def _build_l1_loss(rng):
    # keep |a - b| bounded away from the kink so central differences are clean
    a = _t64(rng, 3, 4, 4)
    gap = rng.uniform(0.05, 0.5, size=(3, 4, 4)) * rng.choice([-1.0, 1.0], size=(3, 4, 4))
    b = Tensor(a.data + gap, dtype=np.float64)
    return [a, b], ops.l1_loss


def _build_feature_l2(rng):
    a = _t64(rng, 3, 4, 4)
    b = _t64(rng, 3, 4, 4)
    return [a, b], ops.feature_l2


def _build_bce(rng):
    logit = _t64(rng, 4, 5, lo=-2.0, hi=2.0)
    target = Tensor(rng.uniform(0.1, 0.9, size=(4, 5)), dtype=np.float64)
    return [logit, target], ops.bce_with_logit


def _build_tv(rng):
    # monotone ramps keep every pixel difference away from the |.| kink
    rows = np.cumsum(rng.uniform(0.05, 0.3, size=5))
    cols = np.cumsum(rng.uniform(0.05, 0.3, size=5))
    base = rows[:, None] + cols[None, :]
    noise = rng.uniform(-0.02, 0.02, size=(2, 3, 5, 5))
    x = Tensor(base[None, None] + noise, dtype=np.float64)
    return [x], ops.tv_loss


def _build_softmax_ce(rng):
    x = _t64(rng, 5, 4, lo=-2.0, hi=2.0)
    labels = rng.integers(0, 4, size=5)
    return [x], lambda x: ops.softmax_cross_entropy(x, labels)


REGISTRY = {
    "conv2d": _build_conv2d,
    "conv_transpose2d": _build_conv_transpose2d,
    "bilinear_sample": _build_bilinear_sample,
    "relu": _build_pointwise("relu"),
    "leaky_relu": _build_pointwise("leaky_relu"),
    "sigmoid": _build_pointwise("sigmoid"),
    "tanh": _build_pointwise("tanh"),
    "instance_norm": _build_instance_norm,
    "linear": _build_linear,
    "l1_loss": _build_l1_loss,
    "feature_l2": _build_feature_l2,
    "bce_with_logit": _build_bce,
    "tv_loss": _build_tv,
    "softmax_cross_entropy": _build_softmax_ce,
}

# bilinear flow gradients are piecewise constant in the source values, and
# the losses are piecewise linear: central differences see the kink region,
# so their bar sits at 1e-3; smooth ops must meet 1e-4.
TOLERANCES = {
    "bilinear_sample": 1e-3,
    "l1_loss": 1e-3,
    "feature_l2": 1e-3,
    "tv_loss": 1e-3,
}
DEFAULT_TOL = 1e-4


def tolerance_for(opname: str) -> float:
    return TOLERANCES.get(opname, DEFAULT_TOL)


def grad_check(opname: str, eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    """Return the max relative error between analytic and central-difference
    gradients over sampled coordinates of every input."""
    try:
        builder = REGISTRY[opname]
    except KeyError:
        raise ParameterError(
            f"unregistered op {opname!r}; registry has {sorted(REGISTRY)}"
        )
    rng = np.random.default_rng(seed)
    tensors, fwd = builder(rng)
    for t in tensors:
        t.requires_grad = True
    out = fwd(*tensors)
    proj = rng.normal(size=out.shape)
    loss = ops.sum_all(ops.mul(out, Tensor(proj, dtype=np.float64)))
    backward(loss)

    def scalar_loss():
        o = fwd(*tensors)
        return float((o.data * proj).sum())

    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= MAX_COORDS
                  else rng.choice(n, size=MAX_COORDS, replace=False))
        for i in coords:
            keep = flat[i]
            flat[i] = keep + eps
            up = scalar_loss()
            flat[i] = keep - eps
            dn = scalar_loss()
            flat[i] = keep
            numeric = (up - dn) / (2 * eps)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, rel)
    return worst


def run_all(seed: int = 0) -> dict[str, tuple[float, float, bool]]:
    """Check the whole registry; returns name -> (max rel error, tol, pass)."""
    table = {}
    for name in REGISTRY:
        err = grad_check(name, seed=seed)
        tol = tolerance_for(name)
        table[name] = (err, tol, err < tol)
    return table
