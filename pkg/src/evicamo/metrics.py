"""Evaluation metrics for foreground maps: structure measure, adaptive
enhanced-alignment, weighted F, MAE, and expected calibration error with
reliability bins. Pure numpy; deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

_EPS = float(np.finfo(np.float64).eps)


def _as_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = (np.asarray(gt, dtype=np.float64) > 0.5).astype(np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ValueError("prediction values must lie in [0, 1]")
    return pred, gt


def mae(pred, gt) -> float:
    """Mean absolute error over all pixels."""
    pred, gt = _as_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


# ---------------------------------------------------------------------------
# structure measure
# ---------------------------------------------------------------------------


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    fg = (pred * gt)[gt == 1]
    bg = ((1.0 - pred) * (1.0 - gt))[gt == 0]
    return u * _object_score(fg) + (1.0 - u) * _object_score(bg)


def _region_ssim(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    if n == 0:
        return 1.0
    mx, my = x.mean(), y.mean()
    if n > 1:
        vx = ((x - mx) ** 2).sum() / (n - 1)
        vy = ((y - my) ** 2).sum() / (n - 1)
        vxy = ((x - mx) * (y - my)).sum() / (n - 1)
    else:
        vx = vy = vxy = 0.0
    a = 4.0 * mx * my * vxy
    b = (mx * mx + my * my) * (vx + vy)
    if a != 0.0:
        return a / (b + _EPS)
    return 1.0 if b == 0.0 else 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    rows, cols = np.nonzero(gt)
    cy = int(np.round(rows.mean())) + 1
    cx = int(np.round(cols.mean())) + 1
    total = float(h * w)
    score = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        gq = gt[rs, cs]
        if gq.size == 0:
            continue
        score += (gq.size / total) * _region_ssim(pred[rs, cs].ravel(), gq.ravel())
    return score


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure similarity: alpha * object term + (1 - alpha) * region term.

    Degenerate masks fall back to the prediction mean: an empty mask scores
    1 - mean(pred), a full mask scores mean(pred).
    """
    pred, gt = _as_pair(pred, gt)
    y = gt.mean()
    if y == 0.0:
        score = 1.0 - pred.mean()
    elif y == 1.0:
        score = pred.mean()
    else:
        score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(np.clip(score, 0.0, 1.0))


# ---------------------------------------------------------------------------
# adaptive enhanced-alignment measure
# ---------------------------------------------------------------------------


def adaptive_e_measure(pred, gt) -> float:
    """Enhanced-alignment score of the prediction binarized at 2 * mean(pred)."""
    pred, gt = _as_pair(pred, gt)
    thr = min(2.0 * pred.mean(), 1.0)
    fm = (pred >= thr).astype(np.float64)
    if gt.sum() == 0:
        enhanced = 1.0 - fm
    elif (1.0 - gt).sum() == 0:
        enhanced = fm
    else:
        dfm = fm - fm.mean()
        dgt = gt - gt.mean()
        align = 2.0 * dfm * dgt / (dfm * dfm + dgt * dgt + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(np.clip(enhanced.mean(), 0.0, 1.0))


# ---------------------------------------------------------------------------
# weighted F-measure
# ---------------------------------------------------------------------------


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _nearest_foreground(gt: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Distance to and flat index of the nearest foreground pixel.

    Ties resolve to the first foreground pixel in row-major order, which
    keeps the result independent of library internals.
    """
    h, w = gt.shape
    fg = np.argwhere(gt > 0)
    fg_flat = fg[:, 0] * w + fg[:, 1]
    ys, xs = np.indices((h, w))
    pix = np.stack([ys.ravel(), xs.ravel()], axis=1)
    dist = np.empty(h * w, dtype=np.float64)
    nearest = np.empty(h * w, dtype=np.int64)
    step = max(1, int(chunk * 2048 / max(len(fg), 1)))
    for start in range(0, len(pix), step):
        block = pix[start : start + step]
        d2 = ((block[:, None, :] - fg[None, :, :]) ** 2).sum(-1)
        arg = d2.argmin(axis=1)
        nearest[start : start + step] = fg_flat[arg]
        dist[start : start + step] = np.sqrt(d2[np.arange(len(block)), arg])
    return dist.reshape(h, w), nearest.reshape(h, w)


def weighted_f_measure(pred, gt, beta2: float = 0.3) -> float:
    """Boundary-aware F-score: errors substituted from the nearest foreground
    pixel, smoothed by a 7x7 Gaussian (sigma 5), and down-weighted with
    distance from the object before computing (1+b)PR / (bP + R)."""
    pred, gt = _as_pair(pred, gt)
    if gt.sum() == 0:
        return 0.0
    fg = gt == 1
    bg = ~fg
    err = np.abs(pred - gt)
    dist, nearest = _nearest_foreground(gt)
    err_t = err.copy()
    err_t[bg] = err.ravel()[nearest[bg]]
    smoothed = ndi.correlate(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = err.copy()
    swap = fg & (smoothed < err)
    min_err[swap] = smoothed[swap]
    importance = np.ones_like(gt)
    importance[bg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[bg])
    weighted_err = min_err * importance
    tp = gt.sum() - weighted_err[fg].sum()
    fp = weighted_err[bg].sum()
    recall = 1.0 - weighted_err[fg].mean()
    precision = tp / (tp + fp + _EPS)
    score = (1.0 + beta2) * precision * recall / (beta2 * precision + recall + _EPS)
    return float(np.clip(score, 0.0, 1.0))


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReliabilityBin:
    low: float
    high: float
    mean_confidence: float
    accuracy: float
    count: int


def ece(preds: list, gts: list, n_bins: int = 10) -> tuple[float, list[ReliabilityBin]]:
    """Expected calibration error over pooled pixels.

    Confidence is max(p, 1-p) with the label thresholded at 0.5, binned into
    `n_bins` equal-width bins over [0.5, 1]. Empty bins report their midpoint
    confidence and contribute nothing.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    pairs = [_as_pair(p, g) for p, g in zip(preds, gts)]
    if pairs:
        p = np.concatenate([pr.ravel() for pr, _ in pairs])
        y = np.concatenate([g.ravel() for _, g in pairs])
    else:
        p = np.empty(0)
        y = np.empty(0)
    conf = np.maximum(p, 1.0 - p)
    correct = (p >= 0.5) == (y > 0.5)
    width = 0.5 / n_bins
    idx = np.clip(((conf - 0.5) / width).astype(np.int64), 0, n_bins - 1)
    total = conf.size
    bins: list[ReliabilityBin] = []
    error = 0.0
    for b in range(n_bins):
        low, high = 0.5 + b * width, 0.5 + (b + 1) * width
        mask = idx == b
        count = int(mask.sum())
        if count:
            mc = float(conf[mask].mean())
            acc = float(correct[mask].mean())
            error += (count / total) * abs(acc - mc)
        else:
            mc = (low + high) / 2.0
            acc = 0.0
        bins.append(ReliabilityBin(low, high, mc, acc, count))
    return float(error), bins


# ---------------------------------------------------------------------------
# aggregation & serialization
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    s_measure: float
    adaptive_e: float
    weighted_f: float
    mae: float
    ece: float
    reliability_bins: list[ReliabilityBin] = field(default_factory=list)
    count: int = 0


def evaluate_pairs(preds: list, gts: list, n_bins: int = 10) -> MetricsReport:
    """Per-sample metric means plus pixel-pooled calibration."""
    if len(preds) != len(gts):
        raise ValueError("prediction / mask count mismatch")
    if not preds:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, [], 0)
    sm = [s_measure(p, g) for p, g in zip(preds, gts)]
    ae = [adaptive_e_measure(p, g) for p, g in zip(preds, gts)]
    wf = [weighted_f_measure(p, g) for p, g in zip(preds, gts)]
    ma = [mae(p, g) for p, g in zip(preds, gts)]
    e, bins = ece(preds, gts, n_bins)
    return MetricsReport(
        s_measure=float(np.mean(sm)),
        adaptive_e=float(np.mean(ae)),
        weighted_f=float(np.mean(wf)),
        mae=float(np.mean(ma)),
        ece=e,
        reliability_bins=bins,
        count=len(preds),
    )


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "count": report.count,
        "s_measure": report.s_measure,
        "adaptive_e": report.adaptive_e,
        "weighted_f": report.weighted_f,
        "mae": report.mae,
        "ece": report.ece,
    }


def report_to_text(report: MetricsReport, prefix: str = "") -> str:
    lines = [f"{prefix}{k}={v:.6f}" if isinstance(v, float) else f"{prefix}{k}={v}"
             for k, v in report_to_dict(report).items()]
    return "\n".join(lines) + "\n"


def bins_to_csv(bins: list[ReliabilityBin]) -> str:
    rows = ["bin_low,bin_high,mean_conf,acc,count"]
    rows += [
        f"{b.low:.6f},{b.high:.6f},{b.mean_confidence:.6f},{b.accuracy:.6f},{b.count}"
        for b in bins
    ]
    return "\n".join(rows) + "\n"
