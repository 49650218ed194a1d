"""Ensemble weights that minimize prediction entropy on unlabeled data.

The weights solve

    min_w  (1/u) sum_ij -P(w)_ij ln P(w)_ij + mu ||w||^2
    s.t.   w on the simplex, optionally with the last weight pinned,

where ``P(w) = sum_k w_k P_k`` mixes the learners' probability matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, InvalidFixedWeight

EPS_CLIP = 1e-12
MAX_HALVINGS = 30


@dataclass(frozen=True)
class SolverConfig:
    mu: float = 0.5
    iterations: int = 10
    step0: float = 1.0
    epsilon_clip: float = EPS_CLIP

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mu < 0 or self.step0 <= 0:
            raise ValueError("need mu >= 0 and step0 > 0")


def prior_weight(xi_hat, alpha):
    """Weight pinned on the SVM learner given its margin density.

    ``1 / (1 + 3 exp(10 (xi_hat - alpha)))``: about 0.71 for an empty margin
    at ``alpha = 0.2``, 0.25 at ``xi_hat == alpha``, near 0 for a crowded one.
    """
    if not 0.0 <= xi_hat <= 1.0:
        raise ValueError(f"margin density must lie in [0, 1], got {xi_hat}")
    return 1.0 / (1.0 + 3.0 * np.exp(10.0 * (xi_hat - alpha)))


def _stack(ps):
    ps = [np.asarray(p, dtype=float) for p in ps]
    if not ps:
        raise DimensionMismatch("need at least one probability matrix")
    shape = ps[0].shape
    if any(p.shape != shape for p in ps) or len(shape) != 2:
        raise DimensionMismatch(f"probability matrices differ in shape: {[p.shape for p in ps]}")
    return np.stack(ps)


def ensemble_proba(ps, w):
    """``sum_k w[k] * ps[k]``."""
    P = _stack(ps)
    w = np.asarray(w, dtype=float)
    if w.shape != (P.shape[0],):
        raise DimensionMismatch(f"{len(w)} weights for {P.shape[0]} learners")
    return np.tensordot(w, P, axes=1)


def objective(ps, w, mu, epsilon_clip=EPS_CLIP):
    """Mean row entropy of the mixture plus ``mu * ||w||^2``; ``0 ln 0 = 0``."""
    P = _stack(ps)
    w = np.asarray(w, dtype=float)
    mix = np.tensordot(w, P, axes=1)
    u = mix.shape[0]
    ent = -np.sum(mix * np.log(np.maximum(mix, epsilon_clip))) / u
    return float(ent + mu * w @ w)


def gradient(ps, w, mu, epsilon_clip=EPS_CLIP):
    P = _stack(ps)
    w = np.asarray(w, dtype=float)
    mix = np.tensordot(w, P, axes=1)
    u = mix.shape[0]
    dent = -(1.0 + np.log(np.maximum(mix, epsilon_clip)))
    return np.einsum("kij,ij->k", P, dent) / u + 2.0 * mu * w


def project_simplex(x, total=1.0):
    """Euclidean projection of ``x`` onto ``{v >= 0, sum(v) = total}``.

    Sort-and-threshold: find the shift ``tau`` so that
    ``sum(max(x - tau, 0)) == total``.
    """
    x = np.asarray(x, dtype=float)
    if total < 0:
        raise ValueError("total must be non-negative")
    if total == 0:
        return np.zeros_like(x)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, len(x) + 1)
    # >= rather than >: index 0 then always qualifies, even when rounding eats a tiny total
    rho = np.flatnonzero(u - css / ind >= 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(x - tau, 0.0)


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    fixed_last: float | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def to_dict(self):
        return {"w": self.w.tolist(), "fixed_last": self.fixed_last}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["w"], dtype=float), d["fixed_last"])


def _project(x, fixed_last):
    if fixed_last is None:
        return project_simplex(x, 1.0)
    out = np.empty_like(x)
    out[:-1] = project_simplex(x[:-1], 1.0 - fixed_last)
    out[-1] = fixed_last
    return out


def solve_weights(ps, fixed_last=None, config=SolverConfig(), return_trace=False):
    """Projected gradient descent with halving backtracking.

    Free coordinates start uniform.  Each step tries ``step0`` and halves it
    (at most 30 times) until the objective does not increase; if no such
    step exists the iterate stays put.  The best iterate seen is returned.
    """
    P = _stack(ps)
    K = P.shape[0]
    if K < 2:
        raise DimensionMismatch("need at least two learners")
    if fixed_last is not None:
        if not 0.0 <= fixed_last < 1.0:
            raise InvalidFixedWeight(f"pinned weight must lie in [0, 1), got {fixed_last}")
        fixed_last = float(fixed_last)
        w = np.full(K, (1.0 - fixed_last) / (K - 1))
        w[-1] = fixed_last
    else:
        w = np.full(K, 1.0 / K)

    def f(v):
        return objective(P, v, config.mu, config.epsilon_clip)

    fw = f(w)
    best_w, best_f = w, fw
    trace = [fw]
    for _ in range(config.iterations):
        g = gradient(P, w, config.mu, config.epsilon_clip)
        step = config.step0
        for _ in range(MAX_HALVINGS + 1):
            cand = _project(w - step * g, fixed_last)
            fc = f(cand)
            if fc <= fw:
                w, fw = cand, fc
                break
            step *= 0.5
        trace.append(fw)
        if fw < best_f:
            best_w, best_f = w, fw
    result = WeightVector(best_w, fixed_last)
    if return_trace:
        return result, trace
    return result
