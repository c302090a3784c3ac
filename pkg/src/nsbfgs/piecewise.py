"""Max-type continuous selections of C^1 functions and Clarke machinery."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import mpnum
from .mpnum import MACHINE, Precision

log = logging.getLogger(__name__)

MIN_NORM_MAX_ITER = 10_000


@dataclass(frozen=True)
class Selection:
    """One smooth piece: value, gradient and an optional segment Lipschitz bound.

    ``lipschitz_on(a, b)`` must return an upper bound for the Lipschitz
    constant of ``gradient`` on the segment conv{a, b}.
    """

    value: Callable[[np.ndarray], object]
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz_on: Callable[[np.ndarray, np.ndarray], object] | None = None


@dataclass(frozen=True)
class PiecewiseFunction:
    """f(x) = max_i f_i(x) over a fixed, ordered list of selections."""

    selections: tuple[Selection, ...]
    dim: int
    precision: Precision = MACHINE
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "selections", tuple(self.selections))
        if not self.selections:
            raise ValueError("a piecewise function needs at least one selection")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    @property
    def m(self) -> int:
        return len(self.selections)

    def _check(self, x: np.ndarray) -> None:
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {x.shape}")

    def values(self, x: np.ndarray) -> list:
        self._check(x)
        vals = [sel.value(x) for sel in self.selections]
        for i, v in enumerate(vals):
            if not self.precision.is_finite(v):
                raise mpnum.NonFiniteError(f"selection {i} is not finite at x")
        return vals

    def argmax(self, vals: Sequence) -> int:
        best = 0
        for i in range(1, len(vals)):
            if vals[i] > vals[best]:
                best = i
        return best

    def __call__(self, x: np.ndarray):
        return max(self.values(x))

    def evaluate(self, x: np.ndarray):
        """Value, gradient and index of the lowest-index maximizing selection.

        This is the gradient the solver uses when no differentiability check
        is made: ties are resolved toward the smallest index.
        """
        vals = self.values(x)
        i = self.argmax(vals)
        return vals[i], self.selections[i].gradient(x), i

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[1]


@dataclass(frozen=True)
class ActiveSets:
    active: tuple[int, ...]
    grad_active: tuple[int, ...]
    is_differentiable: bool
    active_gradient: np.ndarray | None
    value: object = None

    @property
    def unique_index(self) -> int | None:
        """The selection index when I_g is an unambiguous singleton."""
        if self.is_differentiable and len(self.grad_active) == 1:
            return self.grad_active[0]
        return None


def default_tie_tol(prec: Precision):
    if prec.is_machine:
        return 1e-10
    return prec.power10(-(prec.digits - 20))


def default_grad_tol(prec: Precision):
    return default_tie_tol(prec)


def active_sets(f: PiecewiseFunction, x: np.ndarray, tie_tol=None, grad_tol=None) -> ActiveSets:
    """Active and gradient-active index sets at ``x`` under tie tolerances.

    For max-type selections the essentially active set is taken equal to the
    tolerance active set.  When the active gradients disagree the point is
    reported non-differentiable and ``grad_active`` holds the full active set.
    """
    prec = f.precision
    tie_tol = default_tie_tol(prec) if tie_tol is None else prec.scalar(tie_tol)
    grad_tol = default_grad_tol(prec) if grad_tol is None else prec.scalar(grad_tol)
    if not (tie_tol > 0 and grad_tol > 0):
        raise ValueError("tolerances must be positive")
    vals = f.values(x)
    fx = max(vals)
    cut = fx - tie_tol * (1 + abs(fx))
    active = tuple(i for i, v in enumerate(vals) if v >= cut)
    grads = [f.selections[i].gradient(x) for i in active]
    ref = grads[0]
    scale = grad_tol * (1 + mpnum.norm(ref, prec))
    agree = all(mpnum.norm(g - ref, prec) <= scale for g in grads[1:])
    return ActiveSets(active, active, agree, ref if agree else None, fx)


@dataclass(frozen=True)
class CriticalityCertificate:
    min_norm_point: np.ndarray
    coefficients: np.ndarray
    residual_norm: object
    gap: object
    converged: bool = True
    iterations: int = 0


def default_hull_tol(prec: Precision):
    if prec.is_machine:
        return 1e-12
    return prec.power10(-(prec.digits // 2))


def _affine_min_norm(P: np.ndarray, support: list[int], prec: Precision):
    """Min-norm point of the affine hull of P[support]; None if singular."""
    S = P[support]
    k = len(support)
    G = S @ S.T
    K = np.empty((k + 1, k + 1), dtype=prec.dtype)
    K[:k, :k] = G
    one, zero = prec.scalar(1), prec.scalar(0)
    for i in range(k):
        K[i, k] = K[k, i] = one
    K[k, k] = zero
    rhs = np.array([zero] * k + [one], dtype=prec.dtype)
    try:
        sol = mpnum.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    mu = sol[:k]
    if not all(prec.is_finite(v) for v in mu):
        return None
    return mu


def _polish(P: np.ndarray, lam: np.ndarray, prec: Precision):
    """Move the weights to the min-norm point of the best face of their support.

    Projects the origin onto the affine hull of the support.  When some affine
    weight is negative, steps from ``lam`` toward the projection until the
    first weight reaches zero, drops that point and repeats.  Every
    intermediate weight vector is a convex combination of no larger norm.
    """
    zero = prec.scalar(0)
    lam = lam.copy()
    support = [i for i in range(len(lam)) if lam[i] > 0]
    while support:
        mu = _affine_min_norm(P, support, prec)
        if mu is None:
            return None
        if all(v >= 0 for v in mu):
            lam[support] = mu
            return lam
        cur = lam[support]
        theta, drop = min((cur[j] / (cur[j] - mu[j]), j) for j in range(len(support)) if mu[j] < 0)
        lam[support] = cur + (mu - cur) * theta
        lam[support[drop]] = zero
        lam[lam < 0] = zero
        support = [i for i in range(len(lam)) if lam[i] > 0]
    return None


def min_norm_convex_hull(points: Sequence[np.ndarray], tol=None,
                         max_iter: int = MIN_NORM_MAX_ITER) -> CriticalityCertificate:
    """Minimum-norm element of conv(points) with a duality-gap certificate.

    Pairwise Frank-Wolfe with exact line search.  Every few iterations the
    current support is polished by projecting the origin onto the affine
    hull of its best face (see ``_polish``); the polished weights are kept
    only if they do not increase the norm.  Stops when
    ``max_i <w, w - p_i> <= tol * (1 + |w|^2)``.
    """
    if len(points) == 0:
        raise ValueError("need at least one point")
    prec = mpnum.check_same(*points)
    tol = default_hull_tol(prec) if tol is None else prec.scalar(tol)
    if not tol > 0:
        raise ValueError("tol must be positive")
    P = np.vstack(points)
    m = P.shape[0]
    zero = prec.scalar(0)
    sq = [p @ p for p in P]
    start = min(range(m), key=lambda i: sq[i])
    lam = np.array([zero] * m, dtype=prec.dtype)
    lam[start] = prec.scalar(1)
    w = P[start].copy()

    def gap_of(w):
        inner = P @ w
        return w @ w - min(inner), inner

    it = 0
    gap, inner = gap_of(w)
    while it < max_iter:
        ww = w @ w
        if gap <= tol * (1 + ww):
            return _certificate(w, lam, gap, True, it, prec)
        it += 1
        s = min(range(m), key=lambda i: inner[i])
        support = [i for i in range(m) if lam[i] > 0]
        a = max(support, key=lambda i: inner[i])
        d = P[s] - P[a]
        dd = d @ d
        if dd > 0:
            gamma = -(w @ d) / dd
            if gamma > lam[a]:
                gamma = lam[a]
            if gamma > 0:
                lam[s] += gamma
                lam[a] -= gamma
                if lam[a] <= 0:
                    lam[a] = zero
                w = lam @ P
        if it % 5 == 0 or dd == 0:
            polished = _polish(P, lam, prec)
            if polished is not None:
                cand = polished @ P
                if cand @ cand <= w @ w:
                    lam, w = polished, cand
        gap, inner = gap_of(w)
    log.warning("min_norm_convex_hull hit the iteration cap (%d); gap=%s", max_iter, gap)
    return _certificate(w, lam, gap, gap <= tol * (1 + w @ w), it, prec)


def _certificate(w, lam, gap, ok, it, prec):
    total = sum(lam)
    lam = lam / total
    return CriticalityCertificate(w, lam, mpnum.norm(w, prec), gap, bool(ok), it)


def is_critical(f: PiecewiseFunction, x: np.ndarray, tol=None, tie_tol=None,
                hull_tol=None) -> tuple[bool, CriticalityCertificate]:
    """Test 0 in conv{grad f_i(x) : i active} up to ``tol * (1 + max |grad|)``."""
    prec = f.precision
    tol = default_hull_tol(prec) if tol is None else prec.scalar(tol)
    sets = active_sets(f, x, tie_tol=tie_tol)
    grads = [f.selections[i].gradient(x) for i in sets.active]
    cert = min_norm_convex_hull(grads, tol=hull_tol)
    scale = max(mpnum.norm(g, prec) for g in grads)
    return bool(cert.residual_norm <= tol * (1 + scale)), cert


def check_a2_1(f: PiecewiseFunction, x_star: np.ndarray, tol=None):
    """Strictly positive vanishing convex combination of affinely independent gradients.

    Returns ``(flag, weights)`` with the weights normalized to sum 1.
    """
    prec = f.precision
    tol = default_hull_tol(prec) if tol is None else prec.scalar(tol)
    grads = [sel.gradient(x_star) for sel in f.selections]
    m, n = len(grads), f.dim
    cert = min_norm_convex_hull(grads)
    if m > n + 1:
        log.info("check_a2_1: m=%d > n+1=%d, affine independence is impossible", m, n + 1)
        return False, cert.coefficients
    if m > 1:
        diffs = [g - grads[0] for g in grads[1:]]
        if mpnum.rank_of_span(diffs) != m - 1:
            log.info("check_a2_1: gradients are affinely dependent")
            return False, cert.coefficients
    ok = cert.residual_norm <= tol and all(a >= tol for a in cert.coefficients)
    return bool(ok), cert.coefficients


def nspace_basis(grads: Sequence[np.ndarray], tol=None, base: int = 0):
    """Orthonormal basis of span{grad_i - grad_base} and its dimension."""
    if len(grads) == 0:
        raise ValueError("need at least one gradient")
    mpnum.check_same(*grads)
    n = grads[0].shape[0]
    if any(g.shape != (n,) for g in grads):
        raise ValueError("dimension mismatch among gradients")
    diffs = [g - grads[base] for i, g in enumerate(grads) if i != base]
    if not diffs:
        return [], 0
    basis = mpnum.span_basis(diffs, tol)
    return basis, len(basis)
