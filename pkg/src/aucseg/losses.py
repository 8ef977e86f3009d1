"""Pairwise ranking surrogate losses with analytic gradients.

The empirical pairwise risk for one (positive class, negative class) pair
is the mean of ell(a_m - b_n) over every positive score a_m and negative
score b_n. Computing that literally costs O(P*N) per pair; every
surrogate here admits an exact decomposition that brings one evaluation
down to O(P+N) (square, exponential) or O((P+N) log(P+N)) (hinge):

  square  ell(x) = (1 - x)^2
      mean loss = 1 - 2*mean(a) + 2*mean(b) + mean(a^2) + mean(b^2)
                  - 2*mean(a)*mean(b)
  hinge   ell(x) = max(0, 1 - x)
      sort negatives once; for each positive the active pairs
      (b > a - 1) form a suffix, so a prefix-sum table gives their
      count and sum. At the kink the subgradient 0 is chosen.
  exp     ell(x) = exp(-x)
      mean loss factorizes into mean(exp(-a)) * mean(exp(b)).

``pair_loss_naive`` materializes all pairs and is kept deliberately
independent of the fast paths; it is the reference the fast paths are
validated against.

Multiclass losses pool pixels over the whole batch and sum the pairwise
risk over ordered class pairs (one-vs-one) or class-vs-rest splits
(one-vs-all), skipping pairs where either side is empty. Gradients are
reported with respect to the score entries; callers chain them through
``softmax_backward`` when scores come from a softmax head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._threads import run_tasks
from .errors import ValidationError
from .grids import IGNORE, LabelGrid, LossReport, ScoreGrid

SURROGATES = ("square", "hinge", "exp")

CE_CLAMP = 1e-12

_NAIVE_CHUNK = 2048


@dataclass(frozen=True)
class PairLossResult:
    """Mean pairwise loss for one positive/negative split plus gradients."""

    loss: float
    grad_pos: np.ndarray
    grad_neg: np.ndarray


def _check_pair_inputs(pos, neg, kind):
    if kind not in SURROGATES:
        raise ValidationError("unknown surrogate %r, expected one of %r" % (kind, SURROGATES))
    a = np.asarray(pos, dtype=np.float64).ravel()
    b = np.asarray(neg, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("empty class: pairwise loss needs at least one score on each side")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("scores must be finite")
    return a, b


def pair_loss(pos, neg, kind="square") -> PairLossResult:
    """Mean surrogate loss over all (pos, neg) pairs, decomposed form."""
    a, b = _check_pair_inputs(pos, neg, kind)
    p, n = a.size, b.size
    if kind == "square":
        abar = a.mean()
        bbar = b.mean()
        loss = 1.0 - 2.0 * abar + 2.0 * bbar + (a * a).mean() + (b * b).mean() - 2.0 * abar * bbar
        grad_pos = (2.0 / p) * (a - 1.0 - bbar)
        grad_neg = (2.0 / n) * (1.0 - abar + b)
    elif kind == "exp":
        ea = np.exp(-a)
        eb = np.exp(b)
        mea = ea.mean()
        meb = eb.mean()
        loss = mea * meb
        grad_pos = -(ea / p) * meb
        grad_neg = (eb / n) * mea
    else:
        bs = np.sort(b)
        csum = np.concatenate(([0.0], np.cumsum(bs)))
        # active pairs for positive a: negatives strictly above a - 1
        first = np.searchsorted(bs, a - 1.0, side="right")
        cnt = n - first
        active_sum = csum[n] - csum[first]
        total = np.sum(cnt * (1.0 - a) + active_sum)
        loss = total / (p * n)
        grad_pos = -cnt / float(p * n)
        asort = np.sort(a)
        cnt_neg = np.searchsorted(asort, b + 1.0, side="left")
        grad_neg = cnt_neg / float(p * n)
    return PairLossResult(float(loss), grad_pos, grad_neg)


def pair_loss_naive(pos, neg, kind="square") -> PairLossResult:
    """Reference implementation over explicitly materialized pairs.

    Chunked over positives so large instances stay within memory; the
    arithmetic is the plain all-pairs sum either way.
    """
    a, b = _check_pair_inputs(pos, neg, kind)
    p, n = a.size, b.size
    scale = 1.0 / (p * n)
    total = 0.0
    grad_pos = np.zeros(p)
    grad_neg = np.zeros(n)
    for lo in range(0, p, _NAIVE_CHUNK):
        ac = a[lo : lo + _NAIVE_CHUNK]
        diff = ac[:, None] - b[None, :]
        if kind == "square":
            resid = 1.0 - diff
            total += np.sum(resid * resid)
            grad_pos[lo : lo + _NAIVE_CHUNK] = -2.0 * scale * resid.sum(axis=1)
            grad_neg += 2.0 * scale * resid.sum(axis=0)
        elif kind == "exp":
            e = np.exp(-diff)
            total += e.sum()
            grad_pos[lo : lo + _NAIVE_CHUNK] = -scale * e.sum(axis=1)
            grad_neg += scale * e.sum(axis=0)
        else:
            margin = 1.0 - diff
            active = margin > 0.0
            total += np.sum(margin[active])
            grad_pos[lo : lo + _NAIVE_CHUNK] = -scale * active.sum(axis=1)
            grad_neg += scale * active.sum(axis=0)
    return PairLossResult(float(total * scale), grad_pos, grad_neg)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(scores: np.ndarray, grad_scores: np.ndarray) -> np.ndarray:
    """Exact chain rule through softmax: grad wrt logits from grad wrt scores."""
    s = np.asarray(scores, dtype=np.float64)
    g = np.asarray(grad_scores, dtype=np.float64)
    inner = np.sum(g * s, axis=-1, keepdims=True)
    return s * (g - inner)


def _pool(scores, labels):
    """Flatten a batch into pooled (n_pix, K) scores and (n_pix,) labels.

    Returns the pooled arrays plus per-image (shape, slice) info so
    gradients can be scattered back.
    """
    score_arrays = [s.scores if isinstance(s, ScoreGrid) else np.asarray(s, dtype=np.float64) for s in scores]
    label_arrays = [l.labels if isinstance(l, LabelGrid) else np.asarray(l) for l in labels]
    if len(score_arrays) != len(label_arrays) or not score_arrays:
        raise ValidationError("need equal, nonzero numbers of score and label grids")
    k = score_arrays[0].shape[-1]
    spans = []
    offset = 0
    for i, (s, l) in enumerate(zip(score_arrays, label_arrays)):
        if s.ndim != 3 or s.shape[-1] != k:
            raise ValidationError("score grid %d has shape %r, expected (H, W, %d)" % (i, s.shape, k))
        src = labels[i]
        if isinstance(src, LabelGrid) and src.num_classes != k:
            raise ValidationError("label grid %d has %d classes, scores have %d slots" % (i, src.num_classes, k))
        if l.shape != s.shape[:2]:
            raise ValidationError("label grid %d shape %r does not match scores %r" % (i, l.shape, s.shape[:2]))
        npix = l.size
        spans.append((s.shape, slice(offset, offset + npix)))
        offset += npix
    pooled_s = np.concatenate([s.reshape(-1, k) for s in score_arrays], axis=0)
    pooled_l = np.concatenate([l.reshape(-1) for l in label_arrays], axis=0)
    return pooled_s, pooled_l.astype(np.int64), k, spans


def _pool_pasted(pasted, spans, n_pix):
    if pasted is None:
        return np.zeros(n_pix, dtype=bool)
    masks = [np.asarray(m, dtype=bool).reshape(-1) for m in pasted]
    flat = np.concatenate(masks) if masks else np.zeros(0, dtype=bool)
    if flat.size != n_pix:
        raise ValidationError("pasted masks cover %d pixels, batch has %d" % (flat.size, n_pix))
    return flat


def _scatter(grad_flat, spans):
    out = []
    for shape, span in spans:
        g = grad_flat[span].reshape(shape).copy()
        g.setflags(write=False)
        out.append(g)
    return tuple(out)


def _class_index(pooled_l, k):
    idx = {}
    for c in range(k):
        rows = np.nonzero(pooled_l == c)[0]
        if rows.size:
            idx[c] = rows
    return idx


def _pair_terms(tasks, pairs, grad_flat, kernel):
    """Evaluate per-pair kernels (possibly in a pool) and accumulate in order."""
    fn = pair_loss if kernel == "fast" else pair_loss_naive
    results = run_tasks([lambda t=t: fn(t[0], t[1], t[2]) for t in tasks])
    total = 0.0
    for (channel, rows_pos, rows_neg, scale), res in zip(pairs, results):
        total += res.loss * scale
        grad_flat[rows_pos, channel] += res.grad_pos * scale
        grad_flat[rows_neg, channel] += res.grad_neg * scale
    return total


def _check_norm(pair_norm, kernel):
    if pair_norm not in ("union", "original"):
        raise ValidationError("pair_norm must be 'union' or 'original', got %r" % (pair_norm,))
    if kernel not in ("fast", "naive"):
        raise ValidationError("kernel must be 'fast' or 'naive', got %r" % (kernel,))


def ovo_auc_loss(scores, labels, kind="square", pasted=None, pair_norm="union", kernel="fast") -> LossReport:
    """One-vs-one ranking loss pooled over a batch.

    For every ordered pair of distinct present classes (c, c') the score
    channel c is read at class-c pixels (positives) and class-c' pixels
    (negatives) and fed to the surrogate kernel. Pairs touching an
    entirely absent class are skipped.

    pasted marks pixels injected by the memory bank (one (H, W) bool
    mask per image). With pair_norm="union" (default) each pair term is
    a true mean over the pixels actually present, pasted or not. With
    pair_norm="original" the sums still run over all pixels but the
    denominators are the pre-paste class counts, and pairs whose
    pre-paste count is zero on either side are skipped.
    """
    _check_norm(pair_norm, kernel)
    if kind not in SURROGATES:
        raise ValidationError("unknown surrogate %r, expected one of %r" % (kind, SURROGATES))
    pooled_s, pooled_l, k, spans = _pool(scores, labels)
    pasted_flat = _pool_pasted(pasted, spans, pooled_l.size)
    idx = _class_index(pooled_l, k)
    present = sorted(idx)
    if len(present) < 2:
        raise ValidationError("degenerate batch: AUC undefined with fewer than 2 classes present")
    orig_counts = {c: int(np.sum(~pasted_flat[rows])) for c, rows in idx.items()}
    grad_flat = np.zeros_like(pooled_s)
    pairs = []
    tasks = []
    for c in present:
        for cp in present:
            if cp == c:
                continue
            if pair_norm == "original" and (orig_counts[c] == 0 or orig_counts[cp] == 0):
                continue
            rows_pos = idx[c]
            rows_neg = idx[cp]
            if pair_norm == "original":
                scale = (rows_pos.size * rows_neg.size) / float(orig_counts[c] * orig_counts[cp])
            else:
                scale = 1.0
            pairs.append((c, rows_pos, rows_neg, scale))
            tasks.append((pooled_s[rows_pos, c], pooled_s[rows_neg, c], kind))
    total = _pair_terms(tasks, pairs, grad_flat, kernel)
    return LossReport(loss=total, gradients=_scatter(grad_flat, spans))


def ova_auc_loss(scores, labels, kind="square", pasted=None, pair_norm="union", kernel="fast") -> LossReport:
    """One-vs-all variant: each present class against all other labeled pixels."""
    _check_norm(pair_norm, kernel)
    if kind not in SURROGATES:
        raise ValidationError("unknown surrogate %r, expected one of %r" % (kind, SURROGATES))
    pooled_s, pooled_l, k, spans = _pool(scores, labels)
    pasted_flat = _pool_pasted(pasted, spans, pooled_l.size)
    idx = _class_index(pooled_l, k)
    present = sorted(idx)
    if len(present) < 2:
        raise ValidationError("degenerate batch: AUC undefined with fewer than 2 classes present")
    valid = pooled_l != IGNORE
    orig_valid = int(np.sum(valid & ~pasted_flat))
    orig_counts = {c: int(np.sum(~pasted_flat[rows])) for c, rows in idx.items()}
    grad_flat = np.zeros_like(pooled_s)
    pairs = []
    tasks = []
    for c in present:
        rows_pos = idx[c]
        rows_neg = np.nonzero(valid & (pooled_l != c))[0]
        if rows_neg.size == 0:
            continue
        if pair_norm == "original":
            o_pos = orig_counts[c]
            o_neg = orig_valid - o_pos
            if o_pos == 0 or o_neg == 0:
                continue
            scale = (rows_pos.size * rows_neg.size) / float(o_pos * o_neg)
        else:
            scale = 1.0
        pairs.append((c, rows_pos, rows_neg, scale))
        tasks.append((pooled_s[rows_pos, c], pooled_s[rows_neg, c], kind))
    total = _pair_terms(tasks, pairs, grad_flat, kernel)
    return LossReport(loss=total, gradients=_scatter(grad_flat, spans))


def ce_loss(scores, labels) -> LossReport:
    """Mean cross entropy over labeled pixels, probabilities clamped at 1e-12."""
    pooled_s, pooled_l, k, spans = _pool(scores, labels)
    rows = np.nonzero(pooled_l != IGNORE)[0]
    if rows.size == 0:
        raise ValidationError("no labeled pixels: cross entropy undefined")
    true = pooled_l[rows]
    if true.max() >= k:
        raise ValidationError("label %d outside score channels [0, %d)" % (true.max(), k))
    s_true = np.maximum(pooled_s[rows, true], CE_CLAMP)
    n = rows.size
    loss = float(-np.mean(np.log(s_true)))
    grad_flat = np.zeros_like(pooled_s)
    grad_flat[rows, true] = -1.0 / (n * s_true)
    return LossReport(loss=loss, gradients=_scatter(grad_flat, spans))


def combined_loss(scores, labels, kind="square", mode="ovo", lam=0.25,
                  pasted=None, pair_norm="union", kernel="fast") -> LossReport:
    """Ranking loss plus lam times cross entropy, gradients combined."""
    if mode not in ("ovo", "ova"):
        raise ValidationError("mode must be 'ovo' or 'ova', got %r" % (mode,))
    if not (lam >= 0.0 and np.isfinite(lam)):
        raise ValidationError("lam must be finite and >= 0, got %r" % (lam,))
    auc_fn = ovo_auc_loss if mode == "ovo" else ova_auc_loss
    auc = auc_fn(scores, labels, kind, pasted=pasted, pair_norm=pair_norm, kernel=kernel)
    ce = ce_loss(scores, labels)
    grads = tuple(ga + lam * gc for ga, gc in zip(auc.gradients, ce.gradients))
    for g in grads:
        g.setflags(write=False)
    return LossReport(
        loss=auc.loss + lam * ce.loss,
        gradients=grads,
        parts={"auc": auc.loss, "ce": ce.loss},
    )
