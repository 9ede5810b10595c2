"""Saliency evaluation criteria: MAE, weighted F-measure, overlapping
ratio, structure-measure, Pratt's figure of merit, IoU, and the 256-point
precision-recall / F-measure curves, plus dataset-level aggregation.

Conventions (each has a brute-force twin in the test suite):
* IoU binarizes at the fixed threshold 0.5 (s >= 0.5); OR uses the
  adaptive threshold min(2*mean(s), 1).
* Curves binarize strictly (s > t) at t = k/255, k = 0..255; an empty
  detection has precision 1, and an empty ground truth has recall 1 when
  the detection is also empty, else 0.
* Boundary extraction for PFOM is the 4-neighborhood erosion residue of
  the 0.5-binarized maps; alpha = 1/9; distances are exact Euclidean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from minet.tensor import ShapeError

N_THRESHOLDS = 256
FM_BETA2 = 0.3     # F-measure curves
WF_BETA2 = 1.0     # weighted F-measure
WF_SIGMA = 5.0
PFOM_ALPHA = 1.0 / 9.0
_EPS = 1e-12

# above this fg*bg pair count the exact row-major-tie-break nearest
# foreground search falls back to scipy's distance transform (identical
# except for which of several equidistant pixels is picked)
_DENSE_PAIR_LIMIT = 50_000_000


def _check_pair(s, g):
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ShapeError(f"metric inputs differ in shape: {s.shape} vs {g.shape}")
    if s.ndim != 2:
        s = s.reshape(s.shape[-2], s.shape[-1])
        g = g.reshape(g.shape[-2], g.shape[-1])
    return s, g > 0.5


def mae(s, g) -> float:
    s, gb = _check_pair(s, g)
    return float(np.abs(s - gb).mean())


def _counts(b, gb):
    tp = int(np.count_nonzero(b & gb))
    fp = int(np.count_nonzero(b & ~gb))
    fn = int(np.count_nonzero(~b & gb))
    return tp, fp, fn


def _iou_from(b, gb):
    tp, fp, fn = _counts(b, gb)
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


@dataclass
class ThresholdMetrics:
    iou: float
    or_score: float
    pr_curve: np.ndarray  # (256, 3): threshold, precision, recall
    fm_curve: np.ndarray  # (256, 2): threshold, f-measure


def threshold_metrics(s, g) -> ThresholdMetrics:
    s, gb = _check_pair(s, g)
    iou = _iou_from(s >= 0.5, gb)
    t_adapt = min(2.0 * float(s.mean()), 1.0)
    or_score = _iou_from(s >= t_adapt, gb)

    pr = np.empty((N_THRESHOLDS, 3))
    fm = np.empty((N_THRESHOLDS, 2))
    for k in range(N_THRESHOLDS):
        t = k / 255.0
        b = s > t
        tp, fp, fn = _counts(b, gb)
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        if tp + fn == 0:
            recall = 1.0 if tp + fp == 0 else 0.0
        else:
            recall = tp / (tp + fn)
        den = FM_BETA2 * precision + recall
        f = 0.0 if den == 0 else (1 + FM_BETA2) * precision * recall / den
        pr[k] = (t, precision, recall)
        fm[k] = (t, f)
    return ThresholdMetrics(iou, or_score, pr, fm)


# -- structure measure --------------------------------------------------------

def _sm_object_score(x):
    if x.size == 0:
        return 0.0
    m = x.mean()
    sd = x.std()
    return 2.0 * m / (m * m + 1.0 + sd + np.spacing(1))


def _sm_ssim(p, q):
    n = p.size
    if n <= 1:
        return 1.0 if p == q else 0.0
    mp, mq = p.mean(), q.mean()
    vp = ((p - mp) ** 2).sum() / (n - 1)
    vq = ((q - mq) ** 2).sum() / (n - 1)
    cov = ((p - mp) * (q - mq)).sum() / (n - 1)
    a = 4.0 * mp * mq * cov
    b = (mp * mp + mq * mq) * (vp + vq)
    if a != 0:
        return a / (b + np.spacing(1))
    return 1.0 if b == 0 else 0.0


def s_measure(s, g) -> float:
    """0.5 * object-aware + 0.5 * centroid-quadrant region similarity."""
    s, gb = _check_pair(s, g)
    h, w = gb.shape
    y = gb.mean()
    if y == 0:
        return 1.0 - s.mean()
    if y == 1:
        return float(s.mean())

    mu = y
    s_obj = mu * _sm_object_score(s[gb]) + (1 - mu) * _sm_object_score(1.0 - s[~gb])

    rows, cols = np.nonzero(gb)
    # split below/right of the pixel containing the centroid; floor keeps
    # the split mirror-symmetric except when the centroid is integral
    cy = int(np.floor(rows.mean())) + 1
    cx = int(np.floor(cols.mean())) + 1
    area = h * w
    region = 0.0
    for (rs, cs, weight) in (
        ((0, cy), (0, cx), (cy * cx) / area),
        ((0, cy), (cx, w), (cy * (w - cx)) / area),
        ((cy, h), (0, cx), ((h - cy) * cx) / area),
        ((cy, h), (cx, w), ((h - cy) * (w - cx)) / area),
    ):
        pq = s[rs[0]:rs[1], cs[0]:cs[1]].ravel()
        gq = gb[rs[0]:rs[1], cs[0]:cs[1]].astype(np.float64).ravel()
        region += weight * _sm_ssim(pq, gq)
    return float(max(0.0, 0.5 * s_obj + 0.5 * region))


# -- weighted F-measure -------------------------------------------------------

def _propagated_error(e, gb):
    """Propagate foreground errors outward: every background pixel takes
    the mean error over its nearest foreground pixels (all of them, so the
    result is mirror-symmetric under ties). Also returns the exact squared
    distance to the nearest foreground. Above a pair-count budget the
    dense search falls back to scipy's distance transform, which picks a
    single arbitrary pixel among equidistant candidates."""
    h, w = gb.shape
    fg = np.argwhere(gb)
    et = e.copy()
    if len(fg) * h * w <= _DENSE_PAIR_LIMIT:
        ii, jj = np.mgrid[0:h, 0:w]
        d2 = ((fg[:, 0][:, None] - ii.ravel()[None, :]) ** 2
              + (fg[:, 1][:, None] - jj.ravel()[None, :]) ** 2)
        d2min = d2.min(axis=0)
        tied = d2 == d2min[None, :]
        e_fg = e[gb]
        prop = (e_fg[:, None] * tied).sum(axis=0) / tied.sum(axis=0)
        et[~gb] = prop.reshape(h, w)[~gb]
        return et, d2min.reshape(h, w).astype(np.float64)
    dist, (ni, nj) = ndimage.distance_transform_edt(~gb, return_indices=True)
    et[~gb] = e[ni[~gb], nj[~gb]]
    ii, jj = np.mgrid[0:h, 0:w]
    d2 = (ni - ii) ** 2.0 + (nj - jj) ** 2.0
    return et, d2


def _gaussian_full(x, sigma):
    """Separable Gaussian smoothing with an untruncated kernel, normalized
    so each pixel's weights over the image sum to one."""
    h, w = x.shape
    ky = np.exp(-(np.arange(-(h - 1), h, dtype=np.float64) ** 2) / (2 * sigma ** 2))
    kx = np.exp(-(np.arange(-(w - 1), w, dtype=np.float64) ** 2) / (2 * sigma ** 2))
    num = ndimage.correlate1d(x, ky, axis=0, mode="constant")
    num = ndimage.correlate1d(num, kx, axis=1, mode="constant")
    den = ndimage.correlate1d(np.ones_like(x), ky, axis=0, mode="constant")
    den = ndimage.correlate1d(den, kx, axis=1, mode="constant")
    return num / den


def weighted_f(s, g) -> float:
    s, gb = _check_pair(s, g)
    if not gb.any():
        return 1.0 if not (s >= 0.5).any() else 0.0
    e = np.abs(s - gb)
    et, d2 = _propagated_error(e, gb)
    ea = _gaussian_full(et, WF_SIGMA)
    min_e_ea = e.copy()
    m = gb & (ea < e)
    min_e_ea[m] = ea[m]
    b = np.ones_like(e)
    b[~gb] = 2.0 - np.exp(np.log(0.5) / WF_SIGMA * np.sqrt(d2[~gb]))
    ew = min_e_ea * b
    tpw = gb.sum() - ew[gb].sum()
    fpw = ew[~gb].sum()
    recall = 1.0 - ew[gb].mean()
    precision = tpw / (tpw + fpw + _EPS)
    den = WF_BETA2 * precision + recall
    if den <= _EPS:
        return 0.0
    return float((1 + WF_BETA2) * precision * recall / (den + _EPS))


# -- Pratt's figure of merit --------------------------------------------------

_CROSS = ndimage.generate_binary_structure(2, 1)  # 4-neighborhood


def _boundary(mask):
    """Erosion residue: mask pixels with a 4-neighbor outside the mask."""
    eroded = ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~eroded


def pfom(s, g) -> float:
    s, gb = _check_pair(s, g)
    det_b = _boundary(s >= 0.5)
    gt_b = _boundary(gb)
    n_d = int(det_b.sum())
    n_g = int(gt_b.sum())
    if n_g == 0:
        return 1.0 if n_d == 0 else 0.0
    if n_d == 0:
        return 0.0
    _, (ni, nj) = ndimage.distance_transform_edt(~gt_b, return_indices=True)
    ii, jj = np.nonzero(det_b)
    d2 = (ni[ii, jj] - ii) ** 2.0 + (nj[ii, jj] - jj) ** 2.0
    return float((1.0 / (1.0 + PFOM_ALPHA * d2)).sum() / max(n_d, n_g))


# -- dataset aggregation ------------------------------------------------------

@dataclass
class MetricsReport:
    mae: float
    wf: float
    or_score: float
    sm: float
    pfom: float
    iou: float
    pr_curve: np.ndarray
    fm_curve: np.ndarray
    n_images: int = 1
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mae": self.mae, "wf": self.wf, "or": self.or_score,
            "sm": self.sm, "pfom": self.pfom, "iou": self.iou,
            "n_images": self.n_images, "warnings": self.warnings,
        }


def evaluate_pair(s, g) -> MetricsReport:
    tm = threshold_metrics(s, g)
    return MetricsReport(
        mae=mae(s, g), wf=weighted_f(s, g), or_score=tm.or_score,
        sm=s_measure(s, g), pfom=pfom(s, g), iou=tm.iou,
        pr_curve=tm.pr_curve, fm_curve=tm.fm_curve)


def _load_gray(path):
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def evaluate_dataset(pred_dir, gt_dir) -> MetricsReport:
    """Name-matched prediction/ground-truth evaluation: scalar metrics are
    arithmetic means over images, curves are averaged pointwise per
    threshold. Unmatched files are listed as warnings and skipped."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.is_file()}
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.is_file()}
    warnings = [f"prediction without ground truth: {preds[k].name}"
                for k in sorted(set(preds) - set(gts))]
    warnings += [f"ground truth without prediction: {gts[k].name}"
                 for k in sorted(set(gts) - set(preds))]
    matched = sorted(set(preds) & set(gts))
    if not matched:
        raise FileNotFoundError(
            f"no name-matched image pairs between {pred_dir} and {gt_dir}")
    reports = []
    for k in matched:
        s = _load_gray(preds[k])
        g = _load_gray(gts[k])
        if s.shape != g.shape:
            raise ShapeError(f"size mismatch for {k!r}: prediction {s.shape} "
                             f"vs ground truth {g.shape}")
        reports.append(evaluate_pair(s, g))
    n = len(reports)
    return MetricsReport(
        mae=sum(r.mae for r in reports) / n,
        wf=sum(r.wf for r in reports) / n,
        or_score=sum(r.or_score for r in reports) / n,
        sm=sum(r.sm for r in reports) / n,
        pfom=sum(r.pfom for r in reports) / n,
        iou=sum(r.iou for r in reports) / n,
        pr_curve=np.mean([r.pr_curve for r in reports], axis=0),
        fm_curve=np.mean([r.fm_curve for r in reports], axis=0),
        n_images=n, warnings=warnings)


def write_report(report: MetricsReport, json_path, pr_csv_path=None, fm_csv_path=None):
    import json as _json
    Path(json_path).write_text(_json.dumps(report.to_dict(), indent=2) + "\n")
    if pr_csv_path is not None:
        lines = ["threshold,precision,recall"]
        lines += [f"{t:.6f},{p:.8f},{r:.8f}" for t, p, r in report.pr_curve]
        Path(pr_csv_path).write_text("\n".join(lines) + "\n")
    if fm_csv_path is not None:
        lines = ["threshold,fmeasure"]
        lines += [f"{t:.6f},{f:.8f}" for t, f in report.fm_curve]
        Path(fm_csv_path).write_text("\n".join(lines) + "\n")
