"""Evaluation metrics: mean pixel L1 and SSIM, plus report plumbing.

SSIM follows the standard measure: 11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, data range 1.0, weighted local statistics (no sample
correction), mean over the valid (fully-windowed) region, channels
averaged. Identical inputs score exactly 1.0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def l1_metric(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute pixel difference over [0,1] images."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"l1 metric inputs differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def _gaussian_1d(win: int, sigma: float) -> np.ndarray:
    r = np.arange(win, dtype=np.float64) - (win - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _conv1d_valid(arr: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    arr = np.moveaxis(arr, axis, -1)
    n = arr.shape[-1] - len(k) + 1
    out = np.zeros(arr.shape[:-1] + (n,), np.float64)
    for i, w in enumerate(k):
        out += w * arr[..., i : i + n]
    return np.moveaxis(out, -1, axis)


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    return _conv1d_valid(_conv1d_valid(img, k, 0), k, 1)


def ssim(a: np.ndarray, b: np.ndarray, win: int = SSIM_WIN,
         sigma: float = SSIM_SIGMA, k1: float = SSIM_K1, k2: float = SSIM_K2,
         data_range: float = 1.0) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < win or a.shape[1] < win:
        raise ShapeError(f"image {a.shape} smaller than the {win}x{win} ssim window")
    kern = _gaussian_1d(win, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mx = _filter_valid(x, kern)
        my = _filter_valid(y, kern)
        sxx = _filter_valid(x * x, kern) - mx * mx
        syy = _filter_valid(y * y, kern) - my * my
        sxy = _filter_valid(x * y, kern) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class EvalReport:
    per_pair: list = field(default_factory=list)  # dicts: id, theta, l1, ssim
    mean_l1: float = 0.0
    std_l1: float = 0.0
    mean_ssim: float = 0.0
    std_ssim: float = 0.0
    config: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def finalize(self) -> "EvalReport":
        l1s = np.array([p["l1"] for p in self.per_pair])
        ss = np.array([p["ssim"] for p in self.per_pair])
        self.mean_l1 = float(l1s.mean())
        self.std_l1 = float(l1s.std())
        self.mean_ssim = float(ss.mean())
        self.std_ssim = float(ss.std())
        return self

    def to_json(self) -> dict:
        return {
            "mean_l1": self.mean_l1, "std_l1": self.std_l1,
            "mean_ssim": self.mean_ssim, "std_ssim": self.std_ssim,
            "n_pairs": len(self.per_pair), "config": self.config,
            "runtime_s": self.runtime_s, "per_pair": self.per_pair,
        }


def evaluate_pairs(triples, config: dict | None = None) -> EvalReport:
    """triples: iterable of (pair_record, prediction HxWx3, target HxWx3)."""
    report = EvalReport(config=config or {})
    for rec, pred, target in triples:
        report.per_pair.append({
            "id": rec.get("id", "?"), "theta": rec.get("theta"),
            "l1": l1_metric(pred, target), "ssim": ssim(pred, target),
        })
    if not report.per_pair:
        raise ShapeError("no pairs to evaluate")
    return report.finalize()


def write_report(report: EvalReport, json_path, csv_path) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=1)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "theta", "l1", "ssim"])
        for p in report.per_pair:
            writer.writerow([p["id"], p["theta"], f"{p['l1']:.6f}", f"{p['ssim']:.6f}"])
        writer.writerow(["mean", "", f"{report.mean_l1:.6f}", f"{report.mean_ssim:.6f}"])
