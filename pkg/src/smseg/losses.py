"""Scalar cost and loss kernels for matching, training, and verification.

All kernels compute in float64 and return python floats. Probabilities are
clamped to [1e-7, 1 - 1e-7] before any log. Overlap losses (dice, iou)
share a +1.0 smoothing term in numerator and denominator so empty masks
stay finite. Each differentiable kernel has a ``*_grad`` twin returning
(value, gradient w.r.t. the kernel's direct input) for the finite-
difference harness in :mod:`smseg.mfe`.
"""

import math
from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7
SMOOTH_EPS = 1.0


@dataclass(frozen=True)
class CostWeights:
    w_cls: float = 1.0
    w_bce: float = 1.0
    w_dice: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    use_iou_in_loss: bool = True

    def __post_init__(self):
        if min(self.w_cls, self.w_bce, self.w_dice) < 0:
            raise ValueError("cost weights must be >= 0")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError("focal_alpha must lie in (0, 1)")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")


@dataclass
class CostMatrix:
    values: np.ndarray           # (K, T) f64
    row_group: str               # "seen" | "candidate"
    target_ids: tuple            # joint-class index per column


def _clamp(p):
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def class_similarity(v, e):
    """sigmoid(V . E^T): per-query activation against every joint class."""
    matrix = e.matrix if hasattr(e, "matrix") else e
    v = np.asarray(v, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    if v.shape[1] != matrix.shape[1]:
        raise ValueError(f"query width {v.shape[1]} != embedding width {matrix.shape[1]}")
    return sigmoid(v @ matrix.T)


def dice_loss(m, y, eps=SMOOTH_EPS):
    """1 - (2*sum(m*y) + eps) / (sum(m) + sum(y) + eps)."""
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inter = float(np.sum(m * y))
    return 1.0 - (2.0 * inter + eps) / (float(np.sum(m)) + float(np.sum(y)) + eps)


def dice_loss_grad(m, y, eps=SMOOTH_EPS):
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    num = 2.0 * float(np.sum(m * y)) + eps
    den = float(np.sum(m)) + float(np.sum(y)) + eps
    grad = -(2.0 * y * den - num) / den**2
    return 1.0 - num / den, grad


def iou_loss(m, y, eps=SMOOTH_EPS):
    """1 - (sum(min(m,y)) + eps) / (sum(max(m,y)) + eps), soft IoU."""
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    num = float(np.sum(np.minimum(m, y))) + eps
    den = float(np.sum(np.maximum(m, y))) + eps
    return 1.0 - num / den


def iou_loss_grad(m, y, eps=SMOOTH_EPS):
    # subgradient at m == y assigns the tie to the max branch
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    num = float(np.sum(np.minimum(m, y))) + eps
    den = float(np.sum(np.maximum(m, y))) + eps
    dnum = (m < y).astype(np.float64)
    dden = (m >= y).astype(np.float64)
    grad = -(dnum * den - num * dden) / den**2
    return 1.0 - num / den, grad


def bce_mask(logits, y):
    """Mean per-pixel binary cross entropy, computed from logits stably."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return float(np.mean(loss))


def bce_mask_grad(logits, y):
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return bce_mask(x, y), (sigmoid(x) - y) / x.size


def focal_loss(p, target, alpha=0.25, gamma=2.0):
    """Sigmoid focal loss over independent class channels, summed.

    ``p`` is a probability vector over the joint classes. The target
    channel contributes -alpha*(1-p)^gamma*log(p); every other channel
    contributes -(1-alpha)*p^gamma*log(1-p). ``target=None`` means
    "no object": all channels are negatives.
    """
    p = _clamp(p)
    neg = -(1.0 - alpha) * p**gamma * np.log1p(-p)
    total = float(np.sum(neg))
    if target is not None:
        if not 0 <= target < p.shape[-1]:
            raise ValueError(f"target {target} outside {p.shape[-1]} channels")
        pt = p[target]
        total -= float(neg[target])
        total += float(-alpha * (1.0 - pt)**gamma * math.log(pt))
    return total


def focal_loss_grad(p, target, alpha=0.25, gamma=2.0):
    p = _clamp(p)
    if gamma == 0.0:
        grad = (1.0 - alpha) / (1.0 - p)
    else:
        grad = -(1.0 - alpha) * (gamma * p**(gamma - 1.0) * np.log1p(-p)
                                 - p**gamma / (1.0 - p))
    if target is not None:
        pt = p[target]
        if gamma == 0.0:
            grad[target] = -alpha / pt
        else:
            grad[target] = (alpha * gamma * (1.0 - pt)**(gamma - 1.0) * math.log(pt)
                            - alpha * (1.0 - pt)**gamma / pt)
    return focal_loss(p, target, alpha, gamma), grad


def cross_entropy_map(logits, labels, ignore_id=255):
    """Mean softmax cross entropy over pixels whose label is not ignored."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    valid = labels != ignore_id
    picked = labels[valid]
    if picked.size and (picked.min() < 0 or picked.max() >= n):
        raise ValueError(f"labels outside [0, {n})")
    if not picked.size:
        return 0.0
    cols = logits.reshape(n, -1)[:, valid.ravel()]
    mx = cols.max(axis=0)
    lse = mx + np.log(np.sum(np.exp(cols - mx), axis=0))
    return float(np.mean(lse - cols[picked, np.arange(picked.size)]))


def cross_entropy_map_grad(logits, labels, ignore_id=255):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    valid = (labels != ignore_id).ravel()
    count = int(valid.sum())
    grad = np.zeros_like(logits).reshape(n, -1)
    if count:
        cols = logits.reshape(n, -1)[:, valid]
        mx = cols.max(axis=0)
        ex = np.exp(cols - mx)
        soft = ex / ex.sum(axis=0)
        soft[labels.ravel()[valid], np.arange(count)] -= 1.0
        grad[:, valid] = soft / count
    return cross_entropy_map(logits, labels, ignore_id), grad.reshape(logits.shape)


def focal_map(logits, labels, ignore_id=255, alpha=0.25, gamma=2.0):
    """Mean per-pixel sigmoid focal loss of a class-logit map."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    valid = (labels != ignore_id).ravel()
    if not valid.any():
        return 0.0
    p = _clamp(sigmoid(logits.reshape(n, -1)[:, valid]))
    lab = labels.ravel()[valid]
    if lab.min() < 0 or lab.max() >= n:
        raise ValueError(f"labels outside [0, {n})")
    neg = -(1.0 - alpha) * p**gamma * np.log1p(-p)
    hit = p[lab, np.arange(lab.size)]
    per_pixel = neg.sum(axis=0) - neg[lab, np.arange(lab.size)]
    per_pixel += -alpha * (1.0 - hit)**gamma * np.log(hit)
    return float(np.mean(per_pixel))


def cosine_loss(v_rows, c_rows, pairs):
    """Mean of 1 - cos(v_rows[q], c_rows[t]) over candidate pairs."""
    if not pairs:
        return 0.0
    v_rows = np.asarray(v_rows, dtype=np.float64)
    c_rows = np.asarray(c_rows, dtype=np.float64)
    total = 0.0
    for q, t in pairs:
        if not (0 <= q < len(v_rows) and 0 <= t < len(c_rows)):
            raise ValueError(f"pair ({q}, {t}) outside the candidate group")
        a, b = v_rows[q], c_rows[t]
        denom = max(np.linalg.norm(a) * np.linalg.norm(b), 1e-12)
        cos = min(max(float(a @ b) / denom, -1.0), 1.0)   # rounding can leak past 1
        total += 1.0 - cos
    return float(total) / len(pairs)


def cosine_loss_grad(v_rows, c_rows, pairs):
    v_rows = np.asarray(v_rows, dtype=np.float64)
    c_rows = np.asarray(c_rows, dtype=np.float64)
    grad = np.zeros_like(v_rows)
    for q, t in pairs:
        a, b = v_rows[q], c_rows[t]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        denom = max(na * nb, 1e-12)
        cos = float(a @ b) / denom
        grad[q] += -(b / denom - cos * a / max(na * na, 1e-12)) / len(pairs)
    return cosine_loss(v_rows, c_rows, pairs), grad


def _pair_cost_terms(s_row, m_logits, class_id, mask, weights):
    probs = sigmoid(m_logits)
    return (
        weights.w_cls * focal_loss(s_row, class_id, weights.focal_alpha, weights.focal_gamma),
        weights.w_bce * bce_mask(m_logits, mask),
        weights.w_dice * dice_loss(probs, mask),
    )


def match_cost_matrix(s, m_logits, targets, group, weights, seen_count):
    """Assignment costs: w_cls*focal + w_bce*bce + w_dice*dice per (k, t).

    ``targets`` is a list of (joint class id, binary mask). Seen-group
    target ids must lie below ``seen_count``, candidate-group ids at or
    above it; the two groups never share a matrix.
    """
    if group not in ("seen", "candidate"):
        raise ValueError(f"unknown query group {group!r}")
    if not targets:
        raise ValueError("match_cost_matrix needs at least one target")
    s = np.asarray(s, dtype=np.float64)
    m_logits = np.asarray(m_logits, dtype=np.float64)
    k = s.shape[0]
    if len(targets) > k:
        raise ValueError(f"{len(targets)} targets exceed {k} queries in group {group!r}")
    ids = tuple(int(t[0]) for t in targets)
    for cid in ids:
        if group == "seen" and cid >= seen_count:
            raise ValueError(f"seen group given candidate class id {cid}")
        if group == "candidate" and cid < seen_count:
            raise ValueError(f"candidate group given seen class id {cid}")
        if cid < 0 or cid >= s.shape[1]:
            raise ValueError(f"class id {cid} outside joint space {s.shape[1]}")

    p = _clamp(s)
    alpha, gamma = weights.focal_alpha, weights.focal_gamma
    neg = -(1.0 - alpha) * p**gamma * np.log1p(-p)
    pos = -alpha * (1.0 - p)**gamma * np.log(p)
    neg_total = neg.sum(axis=1)
    id_arr = np.array(ids)
    focal = neg_total[:, None] - neg[:, id_arr] + pos[:, id_arr]

    masks = np.stack([np.asarray(t[1], dtype=np.float64).ravel() for t in targets])
    flat = m_logits.reshape(k, -1)
    npix = flat.shape[1]
    softplus_mean = np.mean(np.maximum(flat, 0.0) + np.log1p(np.exp(-np.abs(flat))), axis=1)
    bce = softplus_mean[:, None] - (flat @ masks.T) / npix

    probs = sigmoid(flat)
    inter = probs @ masks.T
    dice = 1.0 - (2.0 * inter + SMOOTH_EPS) / (
        probs.sum(axis=1)[:, None] + masks.sum(axis=1)[None, :] + SMOOTH_EPS)

    values = weights.w_cls * focal + weights.w_bce * bce + weights.w_dice * dice
    return CostMatrix(values=values, row_group=group, target_ids=ids)


def matched_loss(assignment, s, m_logits, targets, weights):
    """Post-assignment training loss over all queries.

    Matched pairs average w_cls*focal + w_bce*bce + w_dice*dice, plus
    w_dice*iou when ``use_iou_in_loss`` (the iou term shares the mask-loss
    weight). Unmatched queries average the all-negative ("no object")
    focal term. Either mean is 0 over an empty set.
    """
    s = np.asarray(s, dtype=np.float64)
    m_logits = np.asarray(m_logits, dtype=np.float64)
    k = s.shape[0]
    matched_total = 0.0
    for pair in assignment.pairs:
        q, t = pair.query, pair.target
        if not (0 <= q < k and 0 <= t < len(targets)):
            raise ValueError(f"assignment pair ({q}, {t}) out of range")
        class_id, mask = targets[t]
        terms = _pair_cost_terms(s[q], m_logits[q], class_id, mask, weights)
        matched_total += sum(terms)
        if weights.use_iou_in_loss:
            matched_total += weights.w_dice * iou_loss(sigmoid(m_logits[q]), mask)
    loss = matched_total / len(assignment.pairs) if assignment.pairs else 0.0

    unmatched = assignment.unmatched_queries
    if unmatched:
        neg_total = 0.0
        for q in unmatched:
            neg_total += weights.w_cls * focal_loss(
                s[q], None, weights.focal_alpha, weights.focal_gamma)
        loss += neg_total / len(unmatched)
    return loss


def sm_loss(matched, cos):
    """Split-matching total: matched-assignment loss plus cosine term."""
    return float(matched) + float(cos)


def mfe_loss(ce, focal, global_term=None):
    """Fusion-block supervision: cross entropy + focal (+ optional hook)."""
    return float(ce) + float(focal) + (0.0 if global_term is None else float(global_term))


def total_loss(sm, mfe):
    return float(sm) + float(mfe)
