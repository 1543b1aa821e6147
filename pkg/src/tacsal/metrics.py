"""Saliency metrics (AUC-Judd, SIM, CC, NSS), pose and trajectory errors, episode outcomes.

Ground-truth saliency is continuous; AUC-Judd and NSS need a discrete fixation
set, obtained by thresholding the ground truth at ``THETA_FIX``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .simworld import Contour, wrap_deg

THETA_FIX = 0.5


class MetricError(ValueError):
    pass


def fixations(gt: np.ndarray, theta: float = THETA_FIX) -> np.ndarray:
    """Boolean fixation grid: ground-truth pixels at or above ``theta``."""
    return np.asarray(gt) >= theta


def _fix_split(pred: np.ndarray, fix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    fix = np.asarray(fix, dtype=bool)
    if pred.shape != fix.shape:
        raise MetricError(f"prediction {pred.shape} and fixations {fix.shape} differ")
    if not fix.any():
        raise MetricError("empty fixation set")
    return pred[fix], pred[~fix]


def auc_judd(pred: np.ndarray, fix: np.ndarray) -> float:
    """Area under the ROC curve with thresholds at the distinct fixation values.

    A pixel counts as detected at threshold ``t`` when its value is ``>= t``;
    the curve runs from (0, 0) to (1, 1) and is integrated with trapezoids.
    """
    pos, neg = _fix_split(pred, fix)
    if neg.size == 0:
        raise MetricError("need at least one non-fixation pixel")
    thresholds = np.unique(pos)[::-1]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr = np.concatenate([[0.0], tp / pos.size, [1.0]])
    fpr = np.concatenate([[0.0], fp / neg.size, [1.0]])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def _mass_normalize(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    total = m.sum()
    if not total > 0:
        raise MetricError(f"{name} has zero total mass")
    return m / total


def sim_metric(pred: np.ndarray, gt: np.ndarray) -> float:
    """Histogram intersection of the two maps after each is scaled to unit mass."""
    p = _mass_normalize(pred, "prediction")
    q = _mass_normalize(gt, "ground truth")
    if p.shape != q.shape:
        raise MetricError("maps differ in shape")
    return float(np.minimum(p, q).sum())


def cc_metric(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pearson correlation over all pixels."""
    a = np.asarray(pred, dtype=np.float64).ravel()
    b = np.asarray(gt, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise MetricError("maps differ in shape")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise MetricError("correlation undefined for a constant map")
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0:
        raise MetricError("correlation undefined for a constant map")
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


def nss_metric(pred: np.ndarray, fix: np.ndarray) -> float:
    """Mean z-score of the prediction at fixation pixels (population std)."""
    pred = np.asarray(pred, dtype=np.float64)
    pos, _ = _fix_split(pred, fix)
    sd = pred.std()
    if np.ptp(pred) == 0 or sd == 0:
        raise MetricError("NSS undefined for a constant prediction")
    return float(np.mean((pos - pred.mean()) / sd))


def saliency_scores(pred: np.ndarray, gt: np.ndarray, theta: float = THETA_FIX) -> dict[str, float]:
    fix = fixations(gt, theta)
    return {"auc_j": auc_judd(pred, fix), "sim": sim_metric(pred, gt),
            "cc": cc_metric(pred, gt), "nss": nss_metric(pred, fix)}


def edge_support(clean: np.ndarray, dilate_px: int = 2, floor: float = 1e-6) -> np.ndarray:
    """Support of the true edge contact, dilated by ``dilate_px`` pixels."""
    return ndimage.binary_dilation(np.asarray(clean) > floor, iterations=dilate_px)


def salient_mass_fraction(pred: np.ndarray, support: np.ndarray) -> float:
    """Share of predicted saliency mass that lies on ``support``."""
    pred = np.asarray(pred, dtype=np.float64)
    total = pred.sum()
    if total <= 0:
        return 0.0
    return float(pred[np.asarray(support, dtype=bool)].sum() / total)


# -- pose and trajectory ------------------------------------------------------------------

def pose_mae(preds: Sequence[Sequence[float]], gts: Sequence[Sequence[float]]) -> tuple[float, float]:
    """``(mean |dy|, mean |wrap(drz)|)`` over ``(y, rz)`` pairs."""
    p = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gts, dtype=np.float64))
    if p.shape != g.shape or p.shape[0] < 1 or p.shape[1] != 2:
        raise MetricError("need equal-length, non-empty lists of (y, rz)")
    dy = p[:, 0] - g[:, 0]
    drz = -wrap_deg(g[:, 1] - p[:, 1])  # (-180, 180]
    return float(np.mean(np.abs(dy))), float(np.mean(np.abs(drz)))


def pose_errors(preds: np.ndarray, gts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed per-sample errors ``(dy, drz)``; ``drz`` wrapped."""
    p = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gts, dtype=np.float64))
    return p[:, 0] - g[:, 0], wrap_deg(p[:, 1] - g[:, 1])


def bias_corrected_mae(preds: np.ndarray, gts: np.ndarray) -> tuple[float, float]:
    """MAE after removing the mean signed error of each component."""
    dy, drz = pose_errors(preds, gts)
    return float(np.mean(np.abs(dy - dy.mean()))), float(np.mean(np.abs(wrap_deg(drz - drz.mean()))))


def trajectory_mae(traj: np.ndarray, contour: Contour) -> float:
    traj = np.atleast_2d(np.asarray(traj, dtype=np.float64))
    if traj.shape[0] < 1:
        raise MetricError("empty trajectory")
    return float(np.mean(np.abs(contour.sdf(traj))))


@dataclass(frozen=True)
class EpisodeCriteria:
    stuck_window: int = 50
    stuck_distance: float = 2.0
    diverge_distance: float = 5.0
    coverage: float = 0.9
    return_distance: float = 10.0
    bins: int = 720


def arc_coverage(traj: np.ndarray, contour: Contour, bins: int = 720) -> float:
    """Fraction of the contour's arc length swept by the projected trajectory.

    Consecutive projections are joined along the shorter way round the contour.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=np.float64))
    L = contour.length
    t = np.array([contour.project(p) for p in traj]) / L * bins
    hit = np.zeros(bins, dtype=bool)
    hit[np.floor(t).astype(int) % bins] = True
    for a, b in zip(t[:-1], t[1:]):
        d = (b - a + bins / 2) % bins - bins / 2
        lo, hi = (a, a + d) if d >= 0 else (a + d, a)
        idx = np.arange(int(np.floor(lo)), int(np.floor(hi)) + 1) % bins
        hit[idx] = True
    return float(hit.mean())


def first_stuck_step(traj: np.ndarray, window: int = 50, distance: float = 2.0) -> int | None:
    traj = np.atleast_2d(np.asarray(traj, dtype=np.float64))
    if len(traj) <= window:
        return None
    net = np.linalg.norm(traj[window:] - traj[:-window], axis=1)
    bad = np.flatnonzero(net < distance)
    return int(bad[0] + window) if bad.size else None


def first_diverged_step(traj: np.ndarray, contour: Contour, distance: float = 5.0) -> int | None:
    bad = np.flatnonzero(np.abs(contour.sdf(np.atleast_2d(traj))) > distance)
    return int(bad[0]) if bad.size else None


def classify_episode(traj: np.ndarray, contour: Contour,
                     cfg: EpisodeCriteria = EpisodeCriteria()) -> str:
    """``"success"``, ``"stuck"`` or ``"diverged"``.

    When both failure conditions occur the earlier one wins. A trajectory that
    neither fails nor completes the circuit is reported as ``"stuck"``.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=np.float64))
    stuck = first_stuck_step(traj, cfg.stuck_window, cfg.stuck_distance)
    div = first_diverged_step(traj, contour, cfg.diverge_distance)
    if div is not None and (stuck is None or div <= stuck):
        return "diverged"
    if stuck is not None:
        return "stuck"
    closed = np.linalg.norm(traj[-1] - traj[0]) <= cfg.return_distance
    if closed and arc_coverage(traj, contour, cfg.bins) >= cfg.coverage:
        return "success"
    return "stuck"


# -- tables -------------------------------------------------------------------------------

TABLE_FIELDS = ("model", "metric", "value", "seed", "dataset_id")


def table_rows_to_csv(rows: Iterable[dict], path: str | Path | None = None,
                      fields: Sequence[str] = TABLE_FIELDS) -> str:
    """Comma-separated export; floats written with ``repr`` precision. Returns the text."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for k, v in row.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
