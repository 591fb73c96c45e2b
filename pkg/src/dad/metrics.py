"""Binary segmentation metrics on single 2-D maps (numpy)."""
import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError

EPS = np.spacing(1)
COLUMNS = ("image_id", "s_alpha", "e_phi", "f_w_beta", "mae", "dice", "iou", "f1", "acc")
METRIC_NAMES = COLUMNS[1:]


def _prepare(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} and mask {gt.shape} must be equal 2-D shapes")
    if pred.size == 0:
        raise ShapeError("empty map")
    if np.any(pred < 0) or np.any(pred > 1) or not np.all(np.isfinite(pred)):
        raise ValidationError("prediction values must lie in [0, 1]")
    if gt.dtype != bool:
        if not np.all((gt == 0) | (gt == 1)):
            raise ValidationError("ground truth must be binary")
        gt = gt.astype(bool)
    return pred, gt


def normalize_prediction(pred):
    """Min-max normalise a map whose range leaves [0, 1]; otherwise return it as is."""
    pred = np.asarray(pred, dtype=np.float64)
    lo, hi = pred.min(), pred.max()
    if lo >= 0 and hi <= 1:
        return pred
    if hi - lo < EPS:
        return np.zeros_like(pred)
    return (pred - lo) / (hi - lo)


def mae(pred, gt):
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# ---------------------------------------------------------------- S-measure

def _object_score(x, mask):
    vals = x[mask]
    mean = vals.mean()
    std = vals.std(ddof=1) if vals.size > 1 else 0.0
    return 2 * mean / (mean ** 2 + 1 + std + EPS)


def _s_object(pred, gt):
    fg = pred * gt
    bg = (1 - pred) * ~gt
    u = gt.mean()
    return u * _object_score(fg, gt) + (1 - u) * _object_score(bg, ~gt)


def _ssim(pred, gt):
    n = pred.size
    gt = gt.astype(np.float64)
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((gt - y) ** 2).sum() / denom
    sxy = ((pred - x) * (gt - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x ** 2 + y ** 2) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def _centroid(gt):
    h, w = gt.shape
    if not gt.any():
        return h // 2, w // 2
    ys, xs = np.nonzero(gt)
    return int(round(ys.mean())) + 1, int(round(xs.mean())) + 1


def _s_region(pred, gt):
    h, w = gt.shape
    cy, cx = _centroid(gt)
    area = h * w
    score = 0.0
    for ys, xs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p, g = pred[ys, xs], gt[ys, xs]
        if p.size == 0:
            continue
        score += p.size / area * _ssim(p, g)
    return score


def s_measure(pred, gt, alpha=0.5):
    """Structure measure: alpha * object-aware + (1 - alpha) * region-aware similarity."""
    pred, gt = _prepare(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


# ---------------------------------------------------------------- E-measure

def adaptive_binarize(pred):
    """Threshold at twice the mean (capped at 1, floored above 0)."""
    thr = min(2 * pred.mean(), 1.0)
    return pred >= max(thr, EPS)


def e_measure(pred, gt):
    """Enhanced-alignment measure of the adaptively binarised prediction."""
    pred, gt = _prepare(pred, gt)
    fm = adaptive_binarize(pred).astype(np.float64)
    g = gt.astype(np.float64)
    if g.sum() == 0:
        enhanced = 1 - fm
    elif g.sum() == g.size:
        enhanced = fm
    else:
        phi_fm = fm - fm.mean()
        phi_gt = g - g.mean()
        align = 2 * phi_gt * phi_fm / (phi_gt ** 2 + phi_fm ** 2 + EPS)
        enhanced = (align + 1) ** 2 / 4
    return float(enhanced.mean())


# ---------------------------------------------------------- weighted F-measure

def gaussian_kernel(size=7, sigma=5.0):
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2))
    k[k < np.finfo(k.dtype).eps * k.max()] = 0
    return k / k.sum()


def _lattice_offsets(d2):
    out = []
    r = int(np.sqrt(d2))
    for dy in range(-r, r + 1):
        rem = d2 - dy * dy
        dx = int(round(np.sqrt(rem)))
        if dx * dx == rem:
            out.extend({(dy, -dx), (dy, dx)})
    return sorted(out)


def nearest_foreground(gt):
    """Squared distance and (row, col) of the nearest foreground pixel.

    Ties are broken towards the smallest raster index (row-major order).
    """
    dist = ndimage.distance_transform_edt(~gt)
    d2 = np.rint(dist ** 2).astype(np.int64)
    h, w = gt.shape
    rows, cols = np.indices(gt.shape)
    idx_r, idx_c = rows.copy(), cols.copy()
    for value in np.unique(d2[~gt]):
        ys, xs = np.nonzero((d2 == value) & ~gt)
        found = np.zeros(ys.size, dtype=bool)
        # offsets are sorted by (dy, dx), i.e. by raster index of the target
        for dy, dx in _lattice_offsets(int(value)):
            ty, tx = ys + dy, xs + dx
            ok = ~found & (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            ok[ok] = gt[ty[ok], tx[ok]]
            idx_r[ys[ok], xs[ok]] = ty[ok]
            idx_c[ys[ok], xs[ok]] = tx[ok]
            found |= ok
    return dist, (idx_r, idx_c)


def weighted_f(pred, gt, beta2=1.0):
    """Weighted F-measure. Returns 0 for an empty ground truth."""
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return 0.0
    err = np.abs(pred - gt)
    dist, (ir, ic) = nearest_foreground(gt)
    et = err[ir, ic]
    ea = ndimage.convolve(et, gaussian_kernel(7, 5.0), mode="constant", cval=0.0)
    min_e_ea = np.where(gt & (ea < err), ea, err)
    b = np.where(gt, 1.0, 2 - np.exp(np.log(0.5) / 5 * dist))
    ew = min_e_ea * b
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1 - ew[gt].mean()
    precision = tpw / (tpw + fpw + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


# ---------------------------------------------------------------- region scores

def region_metrics(pred, gt, threshold=0.5):
    """Dice, IoU, F1 and pixel accuracy of the thresholded prediction.

    Returns the scores plus an ``empty`` flag set when both maps are empty
    (dice and iou are 1 by convention then).
    """
    pred, gt = _prepare(pred, gt)
    binary = pred >= threshold
    tp = int(np.sum(binary & gt))
    fp = int(np.sum(binary & ~gt))
    fn = int(np.sum(~binary & gt))
    tn = int(np.sum(~binary & ~gt))
    empty = tp + fp + fn == 0
    iou = 1.0 if empty else tp / (tp + fp + fn)
    dice = 2 * iou / (1 + iou)  # equals 2tp / (2tp + fp + fn)
    return {"dice": dice, "iou": iou, "f1": dice, "acc": (tp + tn) / gt.size, "empty": empty}


def all_metrics(pred, gt) -> Dict[str, float]:
    pred = normalize_prediction(pred)
    region = region_metrics(pred, gt)
    return {
        "s_alpha": s_measure(pred, gt),
        "e_phi": e_measure(pred, gt),
        "f_w_beta": weighted_f(pred, gt),
        "mae": mae(pred, gt),
        "dice": region["dice"], "iou": region["iou"], "f1": region["f1"], "acc": region["acc"],
    }


# ---------------------------------------------------------------- reports

@dataclass
class MetricReport:
    per_image: List[dict] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    def add(self, image_id, pred, gt):
        gt_b = np.asarray(gt).astype(bool)
        record = {"image_id": str(image_id), **all_metrics(pred, gt_b)}
        if not gt_b.any():
            self.flags.append(f"{image_id}: empty ground truth")
        self.per_image.append(record)
        return record

    @property
    def aggregate(self) -> Dict[str, float]:
        if not self.per_image:
            return {k: float("nan") for k in METRIC_NAMES}
        return {k: float(np.mean([r[k] for r in self.per_image])) for k in METRIC_NAMES}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.per_image:
            writer.writerow([r["image_id"]] + [f"{r[k]:.6f}" for k in METRIC_NAMES])
        agg = self.aggregate
        writer.writerow(["AGGREGATE"] + [f"{agg[k]:.6f}" for k in METRIC_NAMES])
        return buf.getvalue()

    def summary(self) -> str:
        agg = self.aggregate
        lines = [f"images: {len(self.per_image)}"]
        lines += [f"{k:>9}: {agg[k]:.4f}" for k in METRIC_NAMES]
        lines += [f"flag: {f}" for f in self.flags]
        return "\n".join(lines)

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        report = cls()
        for row in csv.DictReader(io.StringIO(text)):
            if row["image_id"] == "AGGREGATE":
                continue
            report.per_image.append({"image_id": row["image_id"],
                                     **{k: float(row[k]) for k in METRIC_NAMES}})
        return report
