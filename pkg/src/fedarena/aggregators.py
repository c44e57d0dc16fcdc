"""Server-side aggregation rules.

RFFL keeps a ReputationState between rounds; the baselines are stateless
functions apart from FoolsGold's history and SignSGD's momentum, which the
orchestrator owns. Every sum over participants runs in ascending id order.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .errors import AllRemoved, EmptyActiveSet, EmptyInput, ShapeMismatch, TooFewParticipants, ZeroNorm


def _stack(deltas):
    vs = [numkit.as_vector(d) for d in deltas]
    if not vs:
        raise EmptyInput("no deltas")
    if len({v.size for v in vs}) != 1:
        raise ShapeMismatch("deltas differ in length")
    return np.stack(vs)


# ----------------------------------------------------------------------- RFFL

@dataclass(frozen=True)
class ReputationState:
    raw: dict
    weights: dict
    active: frozenset
    alpha: float = 0.8
    threshold_fraction: float = 1.0 / 3.0

    @classmethod
    def initial(cls, ids, alpha=0.8, threshold_fraction=1.0 / 3.0):
        """Zero raw reputation; aggregation weights start uniform over the active set."""
        ids = sorted(ids)
        if not ids:
            raise EmptyActiveSet("no participants")
        return cls(raw={i: 0.0 for i in ids}, weights={i: 1.0 / len(ids) for i in ids},
                   active=frozenset(ids), alpha=alpha, threshold_fraction=threshold_fraction)

    @property
    def threshold(self):
        return self.threshold_fraction / len(self.active)


@dataclass
class AllocationResult:
    quota: dict = field(default_factory=dict)
    mask: dict = field(default_factory=dict)
    allocated: dict = field(default_factory=dict)


def rffl_aggregate(deltas, state):
    """Reputation-weighted sum of the active participants' deltas."""
    if not state.active:
        raise EmptyActiveSet("no active participants")
    ids = sorted(deltas)
    stray = set(ids) - state.active
    if stray:
        raise ValueError(f"deltas from inactive participants {sorted(stray)}")
    stacked = _stack([deltas[i] for i in ids])
    out = np.zeros(stacked.shape[1])
    for row, i in zip(stacked, ids):
        out += state.weights[i] * row
    return out


def similarities(deltas, agg):
    """cos_sim(agg, delta_i) per id; an all-zero upload scores 0."""
    out = {}
    for i in sorted(deltas):
        try:
            out[i] = numkit.cos_sim(agg, deltas[i])
        except ZeroNorm:
            if np.linalg.norm(agg) < numkit.ZERO_NORM_TOL:
                raise
            out[i] = 0.0
    return out


def _normalize(raw, ids):
    total = sum(raw[i] for i in ids)
    if total <= 0:
        return None
    return {i: raw[i] / total for i in ids}


def rffl_update_reputation(state, deltas, agg):
    """EMA reputation update followed by threshold pruning.

    Returns (new_state, removed_ids). Raw reputations are clipped at zero,
    normalised over the active set, and anyone whose normalised weight is
    below threshold_fraction / |active| is removed permanently.
    """
    sims = similarities({i: deltas[i] for i in sorted(state.active)}, agg)
    a = state.alpha
    raw = {i: max(0.0, a * state.raw[i] + (1.0 - a) * sims[i]) for i in sorted(state.active)}
    weights = _normalize(raw, sorted(raw))
    if weights is None:
        raise AllRemoved("every participant has zero reputation")
    cut = state.threshold
    removed = {i for i, w in weights.items() if w < cut}
    survivors = sorted(set(weights) - removed)
    if not survivors:
        raise AllRemoved("pruning removed every participant")
    raw = {i: raw[i] for i in survivors}
    new = ReputationState(raw=raw, weights=_normalize(raw, survivors), active=frozenset(survivors),
                          alpha=state.alpha, threshold_fraction=state.threshold_fraction)
    return new, removed


def quotas(weights, dim):
    """Coordinates each participant may download: floor(w_i / max w * D), max gets D."""
    top = max(weights.values())
    return {i: dim if w == top else int(math.floor(w / top * dim)) for i, w in sorted(weights.items())}


def rffl_allocate(agg, deltas, state_prev, state_new):
    """Sparse per-participant downloads from the aggregate.

    Participant i receives the quota_i largest-magnitude coordinates of the
    aggregate minus its own weighted contribution on those coordinates.
    """
    agg = numkit.as_vector(agg)
    result = AllocationResult()
    q = quotas(state_new.weights, agg.size)
    # one sort serves every quota
    order = np.argsort(-np.abs(agg), kind="stable")
    for i in sorted(state_new.active):
        mask = np.sort(order[:q[i]]).astype(np.int64)
        own = state_prev.weights[i] * numkit.as_vector(deltas[i])
        result.quota[i] = q[i]
        result.mask[i] = mask
        result.allocated[i] = numkit.mask_apply(agg - own, mask)
    return result


# ------------------------------------------------------------------ baselines

def fedavg(deltas, sizes):
    ids = sorted(deltas)
    stacked = _stack([deltas[i] for i in ids])
    n = np.array([sizes[i] for i in ids], dtype=np.float64)
    if np.any(n <= 0):
        raise ValueError("data sizes must be positive")
    out = np.zeros(stacked.shape[1])
    for row, ni in zip(stacked, n / n.sum()):
        out += ni * row
    return out


def krum_scores(deltas, f):
    """Sum of squared distances from each delta to its n - f - 2 nearest others."""
    V = _stack(deltas)
    n = V.shape[0]
    k = n - f - 2
    if k < 1:
        raise TooFewParticipants(f"n={n}, f={f} leaves {k} neighbours")
    sq = np.sum(V * V, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * V @ V.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    return np.sort(d2, axis=1)[:, :k].sum(axis=1)


def multikrum(deltas, f, m):
    """Average of the m deltas with the lowest Krum scores (ties: lower index)."""
    n = len(deltas)
    if not 1 <= m < n:
        raise ValueError(f"need 1 <= m < n, got m={m}, n={n}")
    scores = krum_scores(deltas, f)
    chosen = np.sort(np.argsort(scores, kind="stable")[:m])
    V = _stack(deltas)
    return V[chosen].mean(axis=0)


def multikrum_params(n, clip_ratio=0.2):
    f = int(math.ceil(round(clip_ratio * n, 9)))
    return f, n - f


def foolsgold_weights(history, confidence=1.0):
    """Per-id FoolsGold learning-rate weights in [0, 1] from cumulative histories."""
    ids = sorted(history)
    H = _stack([history[i] for i in ids])
    n = len(ids)
    if n == 1:
        return {ids[0]: 1.0}
    norms = np.linalg.norm(H, axis=1)
    safe = np.where(norms < numkit.ZERO_NORM_TOL, 1.0, norms)
    U = H / safe[:, None]
    cs = np.clip(U @ U.T, -1.0, 1.0) - np.eye(n)
    v = cs.max(axis=1)
    # pardoning: scale down similarity to anyone more suspicious than yourself
    for i in range(n):
        for j in range(n):
            if i != j and v[j] > v[i]:
                cs[i, j] *= v[i] / v[j]
    wv = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    top = wv.max()
    if top <= 0:
        return {i: 0.0 for i in ids}
    wv = wv / top
    wv[wv == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        wv = confidence * (np.log(wv / (1.0 - wv)) + 0.5)
    wv = np.clip(np.nan_to_num(wv, neginf=0.0, posinf=1.0), 0.0, 1.0)
    return {i: float(w) for i, w in zip(ids, wv)}


def foolsgold(history, deltas, confidence=1.0):
    w = foolsgold_weights(history, confidence)
    ids = sorted(deltas)
    V = _stack([deltas[i] for i in ids])
    wt = np.array([w[i] for i in ids])
    if wt.sum() <= 0:
        wt = np.ones(len(ids))
    out = np.zeros(V.shape[1])
    for row, wi in zip(V, wt):
        out += wi * row
    return out / wt.sum()


def signsgd(deltas, server_lr):
    """Majority vote over coordinate signs, scaled by server_lr."""
    V = _stack(deltas)
    return server_lr * np.sign(np.sign(V).sum(axis=0))


def median_agg(deltas):
    return numkit.coordinate_median(deltas)


def qffl(deltas, losses, q=0.1, lipschitz=1.0):
    """One q-FedAvg server step expressed as a descent delta."""
    if lipschitz <= 0:
        raise ValueError("lipschitz must be > 0")
    if q < 0:
        raise ValueError("q must be >= 0")
    ids = sorted(deltas)
    V = _stack([deltas[i] for i in ids])
    num = np.zeros(V.shape[1])
    den = 0.0
    for row, i in zip(V, ids):
        loss = max(float(losses[i]), 1e-10)
        lq = loss ** q
        num += lipschitz * lq * row
        den += q * loss ** (q - 1) * float(row @ row) * lipschitz ** 2 + lipschitz * lq
    return num / den
