"""Precision-configurable scalars and dense symmetric linear algebra.

Vectors and matrices are plain numpy arrays.  At machine precision they
have dtype float64; at extended precision they are object arrays whose
entries are ``mpf`` values bound to one mpmath context per digit count.
Every ``mpf`` type carries its context, so two arrays built under different
precisions are detected by a type comparison.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2
import mpmath
import numpy as np
from mpmath.libmp import repr_dps, to_str

DEFAULT_DIGITS = 520
MIN_EXTENDED_DIGITS = 32
MAX_SWEEPS = 30


class PrecisionError(ValueError):
    """Raised when values from different precision contexts are combined."""


class NonFiniteError(ArithmeticError):
    pass


class ConvergenceError(ArithmeticError):
    pass


@functools.lru_cache(maxsize=None)
def _mp_context(digits: int) -> mpmath.ctx_mp.MPContext:
    ctx = mpmath.MPContext()
    ctx.dps = digits
    return ctx


@dataclass(frozen=True)
class Precision:
    """Scalar precision for a run: ``digits=None`` means IEEE double."""

    digits: int | None = None
    _ctx: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.digits is not None:
            if int(self.digits) != self.digits or self.digits < MIN_EXTENDED_DIGITS:
                raise ValueError(
                    f"extended precision needs an integer >= {MIN_EXTENDED_DIGITS} digits, "
                    f"got {self.digits!r}")
            object.__setattr__(self, "_ctx", _mp_context(int(self.digits)))

    @classmethod
    def machine(cls) -> Precision:
        return cls(None)

    @classmethod
    def extended(cls, digits: int = DEFAULT_DIGITS) -> Precision:
        return cls(digits)

    @property
    def is_machine(self) -> bool:
        return self.digits is None

    @property
    def ctx(self):
        return self._ctx

    @property
    def dtype(self):
        return np.float64 if self.is_machine else object

    @property
    def eps(self):
        """Unit roundoff of the context."""
        if self.is_machine:
            return float(np.finfo(np.float64).eps)
        return self._ctx.eps

    def __str__(self) -> str:
        return "machine" if self.is_machine else f"{self.digits} digits"

    # -- scalars -------------------------------------------------------
    def scalar(self, value):
        """Convert ``value`` (int, float, str, mpf) to a context scalar.

        Strings are parsed at full context precision, so ``"1e-4"`` is the
        correctly rounded decimal rather than the binary double nearest it.
        """
        if hasattr(value, "_mpf_") and (self.is_machine or type(value) is not self._ctx.mpf):
            raise PrecisionError(f"scalar from another context used under {self}")
        if self.is_machine:
            out = float(value)
            if not math.isfinite(out):
                raise NonFiniteError(f"non-finite scalar {value!r}")
            return out
        out = self._ctx.mpf(value)
        if not self._ctx.isfinite(out):
            raise NonFiniteError(f"non-finite scalar {value!r}")
        return out

    def decimal(self, value):
        """Like ``scalar`` but floats go through their shortest decimal repr.

        ``decimal(1e-4)`` at extended precision is the context value nearest
        to 1/10000, not the double 1.00000000000000004792...e-4.
        """
        if isinstance(value, (float, np.floating)):
            return self.scalar(repr(float(value)))
        return self.scalar(value)

    def sqrt(self, x):
        return math.sqrt(x) if self.is_machine else self._ctx.sqrt(x)

    def power10(self, e):
        if self.is_machine:
            return 10.0 ** float(e)
        return self._ctx.power(10, self.scalar(e))

    def log10(self, x) -> float:
        if self.is_machine:
            return math.log10(x)
        return float(self._ctx.log10(x))

    def is_finite(self, x) -> bool:
        return math.isfinite(x) if self.is_machine else bool(self._ctx.isfinite(x))

    def format(self, x) -> str:
        """Decimal string that parses back to exactly ``x``."""
        if self.is_machine:
            return format(float(x), ".17e")
        return to_str(self.scalar(x)._mpf_, repr_dps(self._ctx.prec))

    def parse(self, text: str):
        return self.scalar(text.strip())

    # -- arrays --------------------------------------------------------
    def vector(self, values: Iterable) -> np.ndarray:
        out = np.array([self.scalar(v) for v in np.ravel(np.asarray(values, dtype=object))],
                       dtype=self.dtype)
        if out.size == 0:
            raise ValueError("vectors must be nonempty")
        return out

    def zeros(self, n: int) -> np.ndarray:
        return np.array([self.scalar(0)] * n, dtype=self.dtype)

    def matrix(self, values) -> np.ndarray:
        """General dense matrix (used for Gram systems and intermediate work)."""
        arr = np.asarray(values, dtype=object)
        if arr.ndim != 2:
            raise ValueError("matrix needs a 2-d array")
        return np.array([[self.scalar(v) for v in row] for row in arr], dtype=self.dtype)

    def sym_matrix(self, values) -> np.ndarray:
        """Symmetric matrix built from the lower triangle of ``values``.

        The upper triangle of the input is ignored, so the result is symmetric
        by construction.
        """
        arr = np.asarray(values, dtype=object)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"square matrix expected, got shape {arr.shape}")
        n = arr.shape[0]
        out = np.empty((n, n), dtype=self.dtype)
        for i in range(n):
            for j in range(i + 1):
                out[i, j] = out[j, i] = self.scalar(arr[i, j])
        return out

    def identity(self, n: int) -> np.ndarray:
        out = np.empty((n, n), dtype=self.dtype)
        zero, one = self.scalar(0), self.scalar(1)
        for i in range(n):
            for j in range(n):
                out[i, j] = one if i == j else zero
        return out

    def convert(self, arr: np.ndarray) -> np.ndarray:
        """Re-express an array at this precision (exact for float64 input)."""
        arr = np.asarray(arr)
        flat = [self.scalar(v) for v in arr.ravel()]
        return np.array(flat, dtype=self.dtype).reshape(arr.shape)

    def to_float(self, arr) -> np.ndarray:
        return np.array([float(v) for v in np.ravel(arr)], dtype=np.float64).reshape(np.shape(arr))


MACHINE = Precision.machine()


def precision_of(arr) -> Precision:
    """Infer the precision context an array (or scalar) was built under."""
    arr = np.asarray(arr)
    if arr.dtype != object:
        return MACHINE
    if arr.size == 0:
        raise ValueError("cannot infer precision of an empty array")
    first = arr.flat[0]
    ctx = getattr(type(first), "context", None)
    if ctx is None or not hasattr(ctx, "dps"):
        raise PrecisionError(f"unsupported scalar type {type(first).__name__}")
    return Precision(ctx.dps)


def check_same(*arrays) -> Precision:
    """Return the common precision of ``arrays`` or raise ``PrecisionError``."""
    precs = {precision_of(a) for a in arrays}
    if len(precs) != 1:
        raise PrecisionError(f"mixed precision contexts: {sorted(map(str, precs))}")
    prec = precs.pop()
    if not prec.is_machine:
        kind = prec.ctx.mpf
        for a in arrays:
            if any(type(v) is not kind for v in np.asarray(a).flat):
                raise PrecisionError("array mixes scalars from different contexts")
    return prec


def dot(u: np.ndarray, v: np.ndarray):
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    return u @ v


def norm(v: np.ndarray, prec: Precision | None = None):
    prec = prec or precision_of(v)
    return prec.sqrt(v @ v)


def frobenius(M: np.ndarray, prec: Precision | None = None):
    prec = prec or precision_of(M)
    return prec.sqrt(np.sum(M * M))


def check_finite(arr, what: str = "value") -> None:
    arr = np.asarray(arr)
    if arr.dtype == object:
        ok = all(mpmath.isfinite(v) for v in arr.flat)
    else:
        ok = bool(np.all(np.isfinite(arr)))
    if not ok:
        raise NonFiniteError(f"non-finite {what}")


def mat_vec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    if M.ndim != 2 or M.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {M.shape} applied to length {v.shape[0]}")
    check_same(M, v)
    return M @ v


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    sweeps: int = 0


def default_eig_tol(prec: Precision):
    return 10 * prec.eps


def _to_mpfr(x):
    sign, man, exp, _ = x._mpf_
    v = gmpy2.mul_2exp(gmpy2.mpfr(man), exp)
    return -v if sign else v


def _from_mpfr(ctx, v):
    man, exp = v.as_mantissa_exp()
    return ctx.mpf((int(man), int(exp)))


def _jacobi(A, V, tol, fro, sqrt, one, big, max_sweeps):
    """Cyclic Jacobi sweeps in place on ``A`` (and ``V``); returns sweep count."""
    n = A.shape[0]
    floor2 = (tol * fro) ** 2
    scale = (tol / n) ** 2
    sweeps = 0
    while True:
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0:
                    continue
                app, aqq = A[p, p], A[q, q]
                ref = abs(app * aqq)
                if apq * apq <= scale * (ref if ref > floor2 else floor2):
                    continue
                rotated = True
                theta = (aqq - app) / (2 * apq)
                if abs(theta) > big:
                    t = one / (2 * theta)
                else:
                    t = one / (abs(theta) + sqrt(theta * theta + 1))
                    if theta < 0:
                        t = -t
                c = one / sqrt(t * t + 1)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = col_p * c - col_q * s
                A[:, q] = col_p * s + col_q * c
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = row_p * c - row_q * s
                A[q, :] = row_p * s + row_q * c
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = A[q, p] = 0 * apq
                if V is not None:
                    vp, vq = V[:, p].copy(), V[:, q].copy()
                    V[:, p] = vp * c - vq * s
                    V[:, q] = vp * s + vq * c
        if not rotated:
            return sweeps
        sweeps += 1
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (n={n})")


def sym_eigen(M: np.ndarray, tol=None, want_vectors: bool = False,
              max_sweeps: int = MAX_SWEEPS) -> Spectrum:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    A pair (p, q) is rotated while ``|a_pq|`` exceeds
    ``(tol/n) * max(sqrt(|a_pp a_qq|), tol*||M||_F)``.  The diagonal-relative
    part keeps small eigenvalues of positive definite matrices relatively
    accurate; the absolute floor guarantees the final off-diagonal Frobenius
    norm is at most ``tol * ||M||_F``.

    At extended precision the rotations run on MPFR numbers carrying the
    context's bit precision; entries convert exactly in both directions.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"square matrix expected, got shape {M.shape}")
    prec = precision_of(M)
    check_finite(M, "matrix entry")
    n = M.shape[0]
    tol = default_eig_tol(prec) if tol is None else prec.scalar(tol)
    if not tol > 0:
        raise ValueError("tol must be positive")
    if prec.is_machine:
        A = M.astype(np.float64)
        V = np.eye(n) if want_vectors else None
        sweeps = _jacobi(A, V, tol, frobenius(A, prec), math.sqrt, 1.0, 1 / prec.eps, max_sweeps)
        diag = np.diag(A).copy()
    else:
        ctx = prec.ctx
        with gmpy2.context(gmpy2.get_context(), precision=ctx.prec):
            conv = np.vectorize(_to_mpfr, otypes=[object])
            A = conv(M)
            one = gmpy2.mpfr(1)
            V = None
            if want_vectors:
                zero = gmpy2.mpfr(0)
                V = np.array([[one if i == j else zero for j in range(n)] for i in range(n)], dtype=object)
            fro = gmpy2.sqrt(sum(v * v for v in A.flat))
            sweeps = _jacobi(A, V, _to_mpfr(tol), fro, gmpy2.sqrt, one,
                             1 / _to_mpfr(prec.eps), max_sweeps)
            diag = np.array([_from_mpfr(ctx, A[i, i]) for i in range(n)], dtype=object)
            if V is not None:
                V = np.vectorize(lambda v: _from_mpfr(ctx, v), otypes=[object])(V)
    check_finite(diag, "eigenvalue")
    order = sorted(range(n), key=lambda i: diag[i])
    vecs = V[:, order] if V is not None else None
    return Spectrum(diag[order], vecs, sweeps)


def eigenvalues(M: np.ndarray, tol=None) -> np.ndarray:
    return sym_eigen(M, tol).eigenvalues


def gram(vs: Sequence[np.ndarray]) -> np.ndarray:
    D = np.vstack(vs)
    return D @ D.T


def default_rank_tol(prec: Precision):
    """Relative singular-value cutoff: about sqrt(eps) scaled by 1e3.

    Gram eigenvalues carry absolute error ~eps*sigma_max^2, so singular values
    below ~sqrt(eps)*sigma_max are indistinguishable from zero.
    """
    return 1000 * prec.sqrt(prec.eps)


def _stack(vs: Sequence[np.ndarray]) -> Precision:
    if len(vs) == 0:
        raise ValueError("empty vector family")
    n = vs[0].shape[0]
    for v in vs:
        if v.shape != (n,):
            raise ValueError("dimension mismatch in vector family")
    return check_same(*vs)


def rank_of_span(vs: Sequence[np.ndarray], tol=None) -> int:
    """Numerical rank of a vector family via its Gram matrix eigenvalues."""
    prec = _stack(vs)
    tol = default_rank_tol(prec) if tol is None else prec.scalar(tol)
    ev = sym_eigen(gram(vs)).eigenvalues
    top = ev[-1]
    if not top > 0:
        return 0
    # sigma_j > tol * sigma_max  <=>  lambda_j > tol^2 * lambda_max
    cut = tol * tol * top
    return int(sum(1 for lam in ev if lam > cut))


def span_basis(vs: Sequence[np.ndarray], tol=None) -> list[np.ndarray]:
    """Orthonormal basis of span(vs), from the Gram eigendecomposition."""
    prec = _stack(vs)
    tol = default_rank_tol(prec) if tol is None else prec.scalar(tol)
    D = np.vstack(vs)
    spectrum = sym_eigen(D @ D.T, want_vectors=True)
    ev, Q = spectrum.eigenvalues, spectrum.eigenvectors
    top = ev[-1]
    if not top > 0:
        return []
    cut = tol * tol * top
    basis = []
    for j in range(len(ev) - 1, -1, -1):
        if ev[j] > cut:
            u = D.T @ Q[:, j]
            basis.append(u / norm(u, prec))
    return basis


def solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense linear solve by Gaussian elimination with partial pivoting."""
    prec = check_same(A, b)
    if prec.is_machine:
        return np.linalg.solve(A, b)
    n = A.shape[0]
    M = np.concatenate([A.astype(object), b.reshape(n, 1).astype(object)], axis=1)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r, col]))
        if M[piv, col] == 0:
            raise np.linalg.LinAlgError("singular matrix")
        if piv != col:
            M[[col, piv]] = M[[piv, col]]
        for r in range(col + 1, n):
            factor = M[r, col] / M[col, col]
            if factor != 0:
                M[r, col:] = M[r, col:] - M[col, col:] * factor
    x = np.empty(n, dtype=object)
    for r in range(n - 1, -1, -1):
        x[r] = (M[r, n] - M[r, r + 1:n] @ x[r + 1:]) / M[r, r]
    return x
