"""Benchmark problems: random strongly convex max-functions and analytic cases.

Random draws use numpy's PCG64 bit generator (``np.random.default_rng(seed)``)
and its ziggurat ``standard_normal``.  All draws are IEEE doubles which are
then converted exactly to the working precision, and the balancing gradient
g_m is formed at working precision so that sum_i alpha_i g_i = 0 holds to the
context's accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import mpnum
from .mpnum import MACHINE, Precision
from .piecewise import PiecewiseFunction, Selection, check_a2_1, min_norm_convex_hull

REJECTION_CAP = 100
FORMAT_TAG = "maxinstance v1"


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaxInstance:
    """f(x) = max_i g_i^T x + x^T M_i x / 2 + d_i |x|^4 / 24, minimized at 0."""

    n: int
    m: int
    g: tuple[np.ndarray, ...]
    M: tuple[np.ndarray, ...]
    d: tuple
    seed: int
    precision: Precision = MACHINE
    alpha: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, MaxInstance):
            return NotImplemented
        same = (self.n, self.m, self.seed, self.precision) == (
            other.n, other.m, other.seed, other.precision)
        return same and all(
            np.array_equal(a, b) for a, b in zip(self.g + self.M, other.g + other.M)
        ) and list(self.d) == list(other.d)

    __hash__ = None

    @property
    def x_star(self) -> np.ndarray:
        return self.precision.zeros(self.n)


def _simplex_weights(rng: np.random.Generator, m: int) -> np.ndarray:
    """Uniform draw from the simplex, squeezed so every weight is >= 0.1/m."""
    e = rng.exponential(size=m)
    u = e / e.sum()
    return 0.1 / m + 0.9 * u


def generate_max_instance(n: int, m: int, seed: int, precision: Precision = MACHINE) -> MaxInstance:
    """Random instance with 0 in the relative interior of conv{g_i}.

    alpha is drawn from the simplex with every weight >= 0.1/m; g_1..g_{m-1}
    are standard normal; g_m = -(sum_{i<m} alpha_i g_i)/alpha_m.  Draws whose
    gradients are affinely dependent are rejected.  M_i = A_i^T A_i + 0.1 I with
    standard normal A_i, d_i ~ U[0.5, 1.5].
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if m > n + 1:
        raise ValueError(f"m={m} > n+1={n + 1}: affinely independent gradients impossible")
    prec = precision
    rng = np.random.default_rng(seed)
    for _ in range(REJECTION_CAP):
        alpha_f = _simplex_weights(rng, m)
        G = rng.standard_normal((m - 1, n))
        alpha = prec.vector(alpha_f)
        g = [prec.vector(row) for row in G]
        if m == 1:
            g = [prec.zeros(n)]
        else:
            acc = prec.zeros(n)
            for a, gi in zip(alpha[:-1], g):
                acc = acc + gi * a
            g.append(-acc / alpha[-1])
        if m == 1 or mpnum.rank_of_span([gi - g[0] for gi in g[1:]]) == m - 1:
            break
    else:
        raise GenerationError(f"no affinely independent draw within {REJECTION_CAP} tries")
    point_one = prec.scalar("0.1")
    Ms = []
    for _ in range(m):
        A = prec.convert(rng.standard_normal((n, n)))
        Ms.append(prec.sym_matrix(A.T @ A + prec.identity(n) * point_one))
    d = tuple(prec.scalar(v) for v in rng.uniform(0.5, 1.5, size=m))
    total = sum(alpha)
    return MaxInstance(n, m, tuple(g), tuple(Ms), d, seed, prec, alpha / total)


def instance_as_piecewise(inst: MaxInstance) -> PiecewiseFunction:
    """Selections g_i^T x + x^T M_i x/2 + d_i |x|^4/24 with analytic Lipschitz bounds.

    The gradient is g_i + M_i x + (d_i/6)|x|^2 x.  On a segment whose endpoints
    have norm at most R the Hessian norm is at most |M_i|_2 + (d_i/2) R^2.
    """
    prec = inst.precision
    half = prec.scalar("0.5")
    sels = []
    for g, M, d in zip(inst.g, inst.M, inst.d):
        d24, d6, d2 = d / 24, d / 6, d / 2
        mnorm = mpnum.eigenvalues(M)[-1]

        def value(x, g=g, M=M, d24=d24):
            xx = x @ x
            return g @ x + (x @ (M @ x)) * half + d24 * xx * xx

        def gradient(x, g=g, M=M, d6=d6):
            return g + M @ x + x * (d6 * (x @ x))

        def lipschitz_on(a, b, mnorm=mnorm, d2=d2):
            r2 = max(a @ a, b @ b)
            return mnorm + d2 * r2

        sels.append(Selection(value, gradient, lipschitz_on))
    return PiecewiseFunction(tuple(sels), inst.n, prec, name=f"max-instance(n={inst.n},m={inst.m},seed={inst.seed})")


def verify_instance(inst: MaxInstance, tol=None) -> bool:
    """Check the generator's guarantees: interior zero, independence, positivity."""
    prec = inst.precision
    if inst.m > 1:
        if mpnum.rank_of_span([gi - inst.g[0] for gi in inst.g[1:]]) != inst.m - 1:
            return False
    cert = min_norm_convex_hull(list(inst.g))
    tol = (1e-12 if prec.is_machine else prec.power10(-(prec.digits // 2))) if tol is None else tol
    if not cert.residual_norm <= tol:
        return False
    if any(not mpnum.eigenvalues(M)[0] > 0 for M in inst.M):
        return False
    return all(d > 0 for d in inst.d)


def random_start(n: int, seed, precision: Precision = MACHINE, scale=1) -> np.ndarray:
    """Standard normal initial point (times ``scale``) from ``default_rng(seed)``."""
    z = np.random.default_rng(seed).standard_normal(n)
    return precision.vector(z) * precision.decimal(scale)


def random_spd(n: int, seed, precision: Precision = MACHINE) -> np.ndarray:
    """B^T B / n + I with standard normal B: eigenvalues in [1, ~5] for large n."""
    B = precision.convert(np.random.default_rng(seed).standard_normal((n, n)))
    return precision.sym_matrix(B.T @ B / n + precision.identity(n))


def initial_points_logspaced(x_star: np.ndarray, count: int, lo, hi, seed) -> list[np.ndarray]:
    """Points x_star + 10^e_j u_j with e_j equidistant in [lo, hi], u_j random unit vectors.

    ``seed`` is anything ``np.random.default_rng`` accepts.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if not lo < hi:
        raise ValueError("need lo < hi")
    prec = mpnum.precision_of(x_star)
    n = x_star.shape[0]
    rng = np.random.default_rng(seed)
    lo_s, hi_s = prec.decimal(lo), prec.decimal(hi)
    out = []
    for j in range(count):
        e = lo_s + (hi_s - lo_s) * j / (count - 1)
        z = prec.vector(rng.standard_normal(n))
        u = z / mpnum.norm(z, prec)
        out.append(x_star + u * prec.power10(e))
    return out


def log10_distances(points: Sequence[np.ndarray], x_star: np.ndarray) -> list[float]:
    prec = mpnum.precision_of(x_star)
    return [prec.log10(mpnum.norm(p - x_star, prec)) for p in points]


def analytic_problem(tag: str, n: int | None = None, precision: Precision = MACHINE) -> PiecewiseFunction:
    """``abs`` on R, ``quad_plus_abs`` (x1^2 + |x2|) on R^2, ``euclid_norm`` on R^n.

    ``euclid_norm`` is a single nonsmooth-at-origin function (gradient 0 is
    returned at the origin) meant for solver smoke tests only.
    """
    prec = precision
    if tag == "abs":
        one = prec.vector([1])
        sels = (Selection(lambda x: x[0], lambda x: one.copy(), lambda a, b: prec.scalar(1)),
                Selection(lambda x: -x[0], lambda x: -one, lambda a, b: prec.scalar(1)))
        return PiecewiseFunction(sels, 1, prec, "abs")
    if tag == "quad_plus_abs":
        two = prec.scalar(2)

        def grad(sign):
            return lambda x: prec.vector([two * x[0], sign])

        sels = (Selection(lambda x: x[0] * x[0] + x[1], grad(1), lambda a, b: two),
                Selection(lambda x: x[0] * x[0] - x[1], grad(-1), lambda a, b: two))
        return PiecewiseFunction(sels, 2, prec, "quad_plus_abs")
    if tag == "euclid_norm":
        if n is None or n < 1:
            raise ValueError("euclid_norm needs a dimension n >= 1")

        def value(x):
            return mpnum.norm(x, prec)

        def gradient(x):
            r = mpnum.norm(x, prec)
            return x / r if r > 0 else prec.zeros(n)

        return PiecewiseFunction((Selection(value, gradient),), n, prec, f"euclid_norm({n})")
    raise ValueError(f"unknown analytic problem {tag!r}")


def quadratic_problem(A: np.ndarray, precision: Precision | None = None) -> PiecewiseFunction:
    """Smooth f(x) = x^T A x / 2 as a one-piece selection (L = |A|_2).

    The precision defaults to that of ``A``.
    """
    prec = precision or mpnum.precision_of(A)
    A = prec.sym_matrix(A)
    half = prec.scalar("0.5")
    L = mpnum.eigenvalues(A)[-1]
    sel = Selection(lambda x: (x @ (A @ x)) * half, lambda x: A @ x, lambda a, b: L)
    return PiecewiseFunction((sel,), A.shape[0], prec, "quadratic")


# -- instance file format -----------------------------------------------------
#
#   maxinstance v1 <n> <m> <seed> <digits>      (digits 0 = machine precision)
#   m lines:           g_i entries
#   m blocks, n lines: rows of M_i (full symmetric rows)
#   1 line:            d_1 ... d_m
#
# Entries are decimal scientific strings that parse back bit-exactly.

def dumps_instance(inst: MaxInstance) -> str:
    prec = inst.precision
    fmt = prec.format
    lines = [f"{FORMAT_TAG} {inst.n} {inst.m} {inst.seed} {prec.digits or 0}"]
    lines += [" ".join(fmt(v) for v in g) for g in inst.g]
    for M in inst.M:
        lines += [" ".join(fmt(v) for v in row) for row in M]
    lines.append(" ".join(fmt(v) for v in inst.d))
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> MaxInstance:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    head = rows[0]
    if " ".join(head[:2]) != FORMAT_TAG or len(head) != 6:
        raise ValueError(f"not a {FORMAT_TAG} file: {' '.join(head)!r}")
    n, m, seed, digits = (int(v) for v in head[2:])
    prec = MACHINE if digits == 0 else Precision(digits)
    body = rows[1:]
    if len(body) != m + m * n + 1:
        raise ValueError(f"expected {m + m * n + 1} data lines, found {len(body)}")

    def vec(tokens, size):
        if len(tokens) != size:
            raise ValueError(f"expected {size} entries, found {len(tokens)}")
        return np.array([prec.parse(t) for t in tokens], dtype=prec.dtype)

    g = tuple(vec(body[i], n) for i in range(m))
    Ms = []
    for b in range(m):
        block = body[m + b * n: m + (b + 1) * n]
        full = np.vstack([vec(r, n) for r in block])
        if any(full[i, j] != full[j, i] for i in range(n) for j in range(i)):
            raise ValueError(f"matrix block {b} is not symmetric")
        Ms.append(full)
    d = tuple(vec(body[-1], m))
    return MaxInstance(n, m, g, tuple(Ms), d, seed, prec)


def write_instance(inst: MaxInstance, path) -> None:
    Path(path).write_text(dumps_instance(inst))


def read_instance(path) -> MaxInstance:
    return loads_instance(Path(path).read_text())


def passes_a2_1(inst: MaxInstance, tol=None) -> bool:
    f = instance_as_piecewise(inst)
    return check_a2_1(f, inst.x_star, tol)[0]
