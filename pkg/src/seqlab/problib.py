"""Probability vectors and the UDA / FixMatch / SequenceMatch losses.

Batch functions take ``(N, L)`` arrays of probabilities. Targets (pseudo-labels,
sharpened distributions, confidence gates) are constants in differentiation.
Losses that feed training accept ``grad=True`` and then also return the
gradient with respect to the *logits* of the prediction stream(s).

Every batch loss is a mean over the full batch, masked samples included.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

EPS = 1e-12


class LossError(ValueError):
    """Invalid loss input (shapes, parameters)."""


# ---------------------------------------------------------------- vectors


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("softmax of non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sharpen(p, T: float, mode: str = "exp") -> np.ndarray:
    """Temperature sharpening.

    ``mode="exp"`` is ``exp(p/T) / sum exp(p/T)`` applied to the probability
    vector itself. ``mode="power"`` is the ``p**(1/T)`` renormalisation.
    """
    if not T > 0:
        raise LossError(f"temperature must be > 0, got {T}")
    p = np.asarray(p, dtype=np.float64)
    if mode == "exp":
        return softmax(p / T)
    if mode == "power":
        q = p ** (1.0 / T)
        return q / q.sum(axis=-1, keepdims=True)
    raise LossError(f"unknown sharpen mode {mode!r}")


class PseudoLabel(NamedTuple):
    class_index: int
    confidence: float


def pseudo_label(p) -> PseudoLabel:
    p = np.asarray(p, dtype=np.float64)
    k = int(np.argmax(p))  # first maximum wins ties
    return PseudoLabel(k, float(p[k]))


def confidence_mask(p, tau: float):
    """``max(p) >= tau`` along the last axis (bool, or bool array for batches)."""
    if not 0.0 < tau <= 1.0:
        raise LossError(f"tau must be in (0, 1], got {tau}")
    m = np.asarray(p, dtype=np.float64).max(axis=-1) >= tau
    return bool(m) if np.ndim(m) == 0 else m


def cross_entropy_hard(target: int, p) -> float:
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= target < p.shape[-1]:
        raise LossError(f"target {target} outside [0, {p.shape[-1]})")
    return float(-np.log(max(p[target], EPS)))


def cross_entropy_soft(target, p) -> float:
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(-np.sum(t * np.log(np.maximum(p, EPS))))


def entropy(q) -> float:
    q = np.asarray(q, dtype=np.float64)
    nz = q > 0
    return float(-np.sum(q[nz] * np.log(np.maximum(q[nz], EPS))))


def kl_div(q, p) -> float:
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(_kl_rows(q[None, :], p[None, :])[0])


# ---------------------------------------------------------------- batch core


def _as_batch(*arrays):
    out = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in arrays]
    for a in out[1:]:
        if a.shape != out[0].shape:
            raise LossError(f"mismatched batch shapes {out[0].shape} vs {a.shape}")
    return out if len(out) > 1 else out[0]


def _kl_rows(q, p):
    logq = np.log(np.maximum(q, EPS))
    logp = np.log(np.maximum(p, EPS))
    return np.sum(np.where(q > 0, q * (logq - logp), 0.0), axis=-1)


def _ce_rows(t, p):
    return -np.sum(t * np.log(np.maximum(p, EPS)), axis=-1)


def _ce_logit_grad(t, p):
    """d/dz of -sum_i t_i log max(p_i, eps) with p = softmax(z), per row."""
    g = np.where(p > EPS, -t / np.maximum(p, EPS), 0.0)
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))


def _onehot(idx, L):
    out = np.zeros((len(idx), L))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _weighted(targets, pred, weights, n, kl):
    """Mean over ``n`` of ``weights * CE/KL(targets, pred)`` and its logit grad."""
    if n == 0:
        return 0.0, np.zeros_like(pred)
    rows = _kl_rows(targets, pred) if kl else _ce_rows(targets, pred)
    value = float(np.sum(weights * rows) / n)
    grad = (weights / n)[:, None] * _ce_logit_grad(targets, pred)
    return value, grad


def _ret(value, grad, want):
    return (value, grad) if want else value


# ---------------------------------------------------------------- losses


def supervised_ce(labels, probs, *, grad=False):
    """Mean hard cross-entropy over a labeled batch."""
    probs = _as_batch(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != probs.shape[0]:
        raise LossError(f"{len(labels)} labels for {probs.shape[0]} predictions")
    L = probs.shape[1]
    if np.any((labels < 0) | (labels >= L)):
        raise LossError(f"label outside [0, {L})")
    v, g = _weighted(_onehot(labels, L), probs, np.ones(len(labels)), len(labels), kl=False)
    return _ret(v, g, grad)


def uda_unsup_loss(weak_probs, strong_probs, tau, T, *, sharpen_mode="exp", grad=False):
    """Confidence-gated soft CE between the sharpened weak view and the strong view."""
    weak, strong = _as_batch(weak_probs, strong_probs)
    gate = (weak.max(axis=1) >= tau).astype(np.float64)
    target = sharpen(weak, T, sharpen_mode)
    v, g = _weighted(target, strong, gate, weak.shape[0], kl=False)
    return _ret(v, g, grad)


def fixmatch_unsup_loss(weak_probs, strong_probs, tau, *, grad=False):
    weak, strong = _as_batch(weak_probs, strong_probs)
    gate = (weak.max(axis=1) >= tau).astype(np.float64)
    target = _onehot(np.argmax(weak, axis=1), weak.shape[1])
    v, g = _weighted(target, strong, gate, weak.shape[0], kl=False)
    return _ret(v, g, grad)


def seqmatch_unsup_ce(weak_probs, strong_probs, tau, T, *, sharpen_mode="exp", grad=False):
    """Hard CE for confident weak views, sharpened soft CE for the rest."""
    weak, strong = _as_batch(weak_probs, strong_probs)
    confident = weak.max(axis=1) >= tau
    hard = _onehot(np.argmax(weak, axis=1), weak.shape[1])
    soft = sharpen(weak, T, sharpen_mode)
    target = np.where(confident[:, None], hard, soft)
    v, g = _weighted(target, strong, np.ones(weak.shape[0]), weak.shape[0], kl=False)
    return _ret(v, g, grad)


def seqmatch_kl_pair(
    src_probs, dst_probs, gate_probs, tau, T, *, invert_gate=False, sharpen_mode="exp", grad=False
):
    """Gated ``KL(sharpen(src), dst)``; the gate is ``max(gate_probs) >= tau``.

    ``invert_gate`` keeps the samples *below* tau instead (the
    low-confidence-only ablation).
    """
    src, dst, gate_p = _as_batch(src_probs, dst_probs, gate_probs)
    gate = gate_p.max(axis=1) >= tau
    if invert_gate:
        gate = ~gate
    target = sharpen(src, T, sharpen_mode)
    v, g = _weighted(target, dst, gate.astype(np.float64), src.shape[0], kl=True)
    return _ret(v, g, grad)


@dataclass(frozen=True)
class LossBreakdown:
    l_sup: float = 0.0
    l_u_ce: float = 0.0
    l_kl_wm: float = 0.0
    l_kl_ms: float = 0.0
    l_kl_ws: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class LossGrads(NamedTuple):
    """Logit gradients of ``LossBreakdown.total`` per stream (None if unused)."""

    labeled: np.ndarray
    medium: np.ndarray | None
    strong: np.ndarray | None


def seqmatch_objective(
    labels,
    labeled_probs,
    weak_probs,
    medium_target_probs,
    medium_probs,
    strong_probs,
    *,
    tau=0.95,
    T=0.5,
    lambda_u=1.0,
    kl_weights=(1.0, 1.0, 1.0),
    sharpen_mode="exp",
):
    """Total SequenceMatch loss with separate target/prediction roles.

    ``medium_target_probs`` sources the m-s target and gate,
    ``medium_probs`` is the prediction scored by the w-m term. During training
    both come from the same forward pass; keeping them apart lets a
    finite-difference check hold targets fixed. Returns
    ``(LossBreakdown, LossGrads)``.
    """
    l_sup, g_lab = supervised_ce(labels, labeled_probs, grad=True)
    weak = np.asarray(weak_probs, dtype=np.float64).reshape(-1, np.shape(labeled_probs)[-1])
    if weak.shape[0] == 0:
        return LossBreakdown(l_sup=l_sup, total=l_sup), LossGrads(g_lab, None, None)
    w_wm, w_ms, w_ws = kl_weights
    ce, g_s = seqmatch_unsup_ce(weak, strong_probs, tau, T, sharpen_mode=sharpen_mode, grad=True)
    wm, g_m = seqmatch_kl_pair(weak, medium_probs, weak, tau, T, sharpen_mode=sharpen_mode, grad=True)
    ms, g_s2 = seqmatch_kl_pair(
        medium_target_probs, strong_probs, medium_target_probs, tau, T,
        sharpen_mode=sharpen_mode, grad=True,
    )
    ws, g_s3 = seqmatch_kl_pair(weak, strong_probs, weak, tau, T, sharpen_mode=sharpen_mode, grad=True)
    l_u = ce + w_wm * wm + w_ms * ms + w_ws * ws
    out = LossBreakdown(l_sup, ce, wm, ms, ws, l_sup + lambda_u * l_u)
    g_medium = lambda_u * w_wm * g_m
    g_strong = lambda_u * (g_s + w_ms * g_s2 + w_ws * g_s3)
    return out, LossGrads(g_lab, g_medium, g_strong)


def seqmatch_total_loss(
    labeled_targets, labeled_probs, weak_probs, medium_probs, strong_probs, **config
) -> LossBreakdown:
    """SequenceMatch loss: supervised CE plus ``lambda_u`` times the
    two-branch unsupervised CE and the w-m, m-s, w-s KL terms.

    Keyword config: ``tau``, ``T``, ``lambda_u``, ``kl_weights``,
    ``sharpen_mode``.
    """
    labeled_probs = _as_batch(labeled_probs)
    L = labeled_probs.shape[1]
    streams = [np.asarray(s, dtype=np.float64).reshape(-1, L) for s in (weak_probs, medium_probs, strong_probs)]
    if len({s.shape[0] for s in streams}) != 1:
        raise LossError(f"unlabeled stream sizes differ: {[s.shape[0] for s in streams]}")
    weak, medium, strong = streams
    breakdown, _ = seqmatch_objective(
        labeled_targets, labeled_probs, weak, medium, medium, strong, **config
    )
    return breakdown
