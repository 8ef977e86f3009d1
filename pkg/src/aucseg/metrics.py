"""Evaluation metrics and imbalance diagnostics.

The ranking metric mirrors the training objective: for each ordered pair
of present classes (c, c'), the probability that channel c ranks a
random class-c pixel above a random class-c' pixel (ties count half),
averaged over the pairs actually realized in the data. IoU is computed
from a pooled confusion matrix; classes that never appear in either
prediction or ground truth are left out of the means.

Imbalance numbers: tau is the squared worst-case ratio between a
class's largest single-image pixel count and its summed count over the
dataset (a mean-normalized variant multiplies by the image count);
imbalance_ratio averages head/tail pixel-count ratios over all
(head, non-head) class pairs. Both are computed in exact integer
arithmetic and converted to float only at the end.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ValidationError
from .grids import IGNORE, ClassStats, LabelGrid, ScoreGrid


def argmax_labels(score_grids):
    """Per-pixel argmax over class slots; ties go to the smaller class id."""
    out = []
    for s in score_grids:
        arr = s.scores if isinstance(s, ScoreGrid) else np.asarray(s, dtype=np.float64)
        out.append(arr.argmax(axis=-1).astype(np.int32))
    return out


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = xs.size
    boundary = np.empty(n, dtype=bool)
    boundary[0] = True
    boundary[1:] = xs[1:] != xs[:-1]
    starts = np.nonzero(boundary)[0]
    ends = np.append(starts[1:], n)
    group = np.cumsum(boundary) - 1
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = mid[group]
    return ranks


def _rank_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """P(pos > neg) + 0.5 P(pos == neg) via rank sums."""
    p, n = pos.size, neg.size
    ranks = _midranks(np.concatenate([pos, neg]))
    u = ranks[:p].sum() - p * (p + 1) / 2.0
    return u / (p * n)


def ovo_auc_metric(scores, labels) -> float:
    """Mean one-vs-one ranking metric over realized ordered class pairs."""
    from .losses import _class_index, _pool

    pooled_s, pooled_l, k, _ = _pool(scores, labels)
    idx = _class_index(pooled_l, k)
    present = sorted(idx)
    if len(present) < 2:
        raise ValidationError("degenerate batch: AUC undefined with fewer than 2 classes present")
    total = 0.0
    pairs = 0
    for c in present:
        for cp in present:
            if cp == c:
                continue
            total += _rank_auc(pooled_s[idx[c], c], pooled_s[idx[cp], c])
            pairs += 1
    return total / pairs


@dataclass(frozen=True)
class Partition:
    head: tuple
    middle: tuple
    tail: tuple

    def groups(self):
        return {"head": self.head, "middle": self.middle, "tail": self.tail}


def make_partition(stats: ClassStats, head_count: int, middle_count: int) -> Partition:
    """Split the nonzero-count classes into head/middle/tail by pixel count.

    Classes are ranked by descending count (ties toward the smaller id);
    the first head_count are head, the next middle_count are middle, the
    rest are tail. The tail must end up nonempty.
    """
    if head_count < 0 or middle_count < 0:
        raise ValidationError("head_count and middle_count must be >= 0")
    counts = stats.count
    ranked = sorted((c for c in range(stats.num_classes) if counts[c] > 0),
                    key=lambda c: (-int(counts[c]), c))
    if head_count + middle_count >= len(ranked):
        raise ValidationError(
            "head %d + middle %d leaves no tail among %d occurring classes"
            % (head_count, middle_count, len(ranked))
        )
    head = tuple(sorted(ranked[:head_count]))
    middle = tuple(sorted(ranked[head_count : head_count + middle_count]))
    tail = tuple(sorted(ranked[head_count + middle_count :]))
    return Partition(head=head, middle=middle, tail=tail)


@dataclass(frozen=True)
class IouReport:
    per_class: np.ndarray
    mean_iou: float
    group_means: dict


def iou_report(pred_labels, true_labels, partition: Partition | None = None) -> IouReport:
    """Pooled-confusion IoU per class plus overall and per-group means.

    Classes absent from both prediction and ground truth get NaN and are
    excluded from every mean. Pixels labeled IGNORE are dropped.
    """
    preds = [p.labels if isinstance(p, LabelGrid) else np.asarray(p) for p in pred_labels]
    trues = [t.labels if isinstance(t, LabelGrid) else np.asarray(t) for t in true_labels]
    if len(preds) != len(trues) or not preds:
        raise ValidationError("need equal, nonzero numbers of predicted and true grids")
    k = None
    for t in true_labels:
        if isinstance(t, LabelGrid):
            k = t.num_classes
            break
    if k is None:
        k = int(max(int(p.max()) for p in preds + trues)) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(preds, trues):
        if p.shape != t.shape:
            raise ValidationError("prediction shape %r != label shape %r" % (p.shape, t.shape))
        valid = t != IGNORE
        tv = t[valid].astype(np.int64)
        pv = p[valid].astype(np.int64)
        if pv.size and (pv.min() < 0 or pv.max() >= k or tv.max() >= k):
            raise ValidationError("labels outside [0, %d)" % k)
        confusion += np.bincount(tv * k + pv, minlength=k * k).reshape(k, k)
    tp = np.diag(confusion).astype(np.float64)
    gt = confusion.sum(axis=1).astype(np.float64)
    pd = confusion.sum(axis=0).astype(np.float64)
    denom = gt + pd - tp
    per_class = np.full(k, np.nan)
    defined = denom > 0
    per_class[defined] = tp[defined] / denom[defined]
    if not defined.any():
        raise ValidationError("IoU undefined: no class appears in prediction or ground truth")
    mean_iou = float(np.nanmean(per_class))
    group_means = {}
    if partition is not None:
        for name, members in partition.groups().items():
            vals = [per_class[c] for c in members if not np.isnan(per_class[c])]
            group_means[name] = float(np.mean(vals)) if vals else float("nan")
    return IouReport(per_class=per_class, mean_iou=mean_iou, group_means=group_means)


def compute_tau(stats: ClassStats, mean_normalized: bool = False) -> float:
    """Squared worst-case concentration of a class into a single image.

    For each occurring class: the largest per-image pixel count over the
    class's summed count across the dataset. tau is the square of the
    worst ratio. With mean_normalized=True the denominator is the mean
    per-image count instead of the sum (ratio scaled by the image
    count), which can exceed 1 by a wide margin on skewed data.
    """
    counts = stats.per_image_counts
    totals = stats.count
    occurring = [c for c in range(stats.num_classes) if totals[c] > 0]
    if not occurring:
        raise ValidationError("empty dataset: no class has pixels")
    best = Fraction(0)
    n_images = stats.num_images
    for c in occurring:
        num = int(counts[:, c].max())
        den = int(totals[c])
        if mean_normalized:
            ratio = Fraction(num * n_images, den)
        else:
            ratio = Fraction(num, den)
        if ratio > best:
            best = ratio
    return float(best * best)


def imbalance_ratio(stats: ClassStats, head_classes) -> float:
    """Mean pairwise pixel-count ratio between head and non-head classes."""
    counts = stats.count
    universe = [c for c in range(stats.num_classes) if counts[c] > 0]
    head = sorted(set(int(c) for c in head_classes))
    if not head:
        raise ValidationError("head class set must be nonempty")
    for c in head:
        if c not in universe:
            raise ValidationError("head class %d has no pixels" % c)
    rest = [c for c in universe if c not in head]
    if not rest:
        raise ValidationError("no non-head classes with pixels")
    acc = Fraction(0)
    for a in head:
        for b in rest:
            acc += Fraction(int(counts[a]), int(counts[b]))
    return float(acc / (len(head) * len(rest)))
