"""BFGS with a bracketing weak-Wolfe line search, restarts and full tracing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mpnum
from .mpnum import MACHINE, Precision
from .piecewise import PiecewiseFunction, active_sets

log = logging.getLogger(__name__)


class CurvatureError(ArithmeticError):
    """s^T y <= 0: the update would lose positive definiteness."""


class LineSearchError(RuntimeError):
    def __init__(self, msg, bracket=None, t=None):
        super().__init__(msg)
        self.bracket = bracket
        self.t = t


@dataclass(frozen=True)
class WolfeParams:
    c1: float = 1e-4
    c2: float = 0.5

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")


@dataclass(frozen=True)
class SolverConfig:
    wolfe: WolfeParams = field(default_factory=WolfeParams)
    max_iter: int = 1000
    grad_stop_tol: float = 0.0
    restart_period: int | None = None
    initial_trial_step: float = 1.0
    line_search_cap: int = 100
    precision: Precision = MACHINE
    # "never": no differentiability check (the practical mode);
    # "tie": stop with a breakdown when active gradients disagree at x^{k+1}.
    differentiability: str = "never"
    track_eigenvalues: bool = True
    keep_matrices: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.initial_trial_step > 0:
            raise ValueError("initial_trial_step must be positive")
        if self.restart_period is not None and self.restart_period < 1:
            raise ValueError("restart_period must be a positive integer")
        if self.line_search_cap < 1:
            raise ValueError("line_search_cap must be >= 1")
        if self.differentiability not in ("never", "tie"):
            raise ValueError(f"unknown differentiability policy {self.differentiability!r}")


@dataclass
class SolverState:
    k: int
    x: np.ndarray
    fval: object
    grad: np.ndarray
    H: np.ndarray
    grad_active_index: int | None

    def is_positive_definite(self) -> bool:
        return bool(mpnum.eigenvalues(self.H)[0] > 0)


@dataclass
class StepRecord:
    t: object
    p: np.ndarray
    x_new: np.ndarray
    s: np.ndarray
    y: np.ndarray
    fval_new: object
    grad_new: np.ndarray
    index_new: int
    wolfe_satisfied: tuple[bool, bool]
    trials: int
    lemma5_bound: object = None
    lemma5_index: int | None = None


@dataclass
class IterRecord:
    """Data attached to iterate x^k (and to the step taken from it, if any)."""

    k: int
    x: np.ndarray
    fval: object
    grad: np.ndarray
    grad_norm: object
    active_index: int
    grad_active: tuple[int, ...]
    ambiguous: bool
    restarted: bool
    eigenvalues: np.ndarray | None = None
    H: np.ndarray | None = None
    memory_metric: object = None
    step: StepRecord | None = None


@dataclass
class RunTrace:
    records: list[IterRecord]
    termination: str
    message: str = ""
    precision: Precision = MACHINE
    config: SolverConfig | None = None

    def __len__(self):
        return len(self.records)

    @property
    def fvals(self) -> list:
        return [r.fval for r in self.records]

    @property
    def steps(self) -> list[StepRecord]:
        return [r.step for r in self.records if r.step is not None]

    @property
    def final(self) -> IterRecord:
        return self.records[-1]


def bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse BFGS update H+ = V H V^T + s s^T/(s^T y), V = I - s y^T/(s^T y).

    Evaluated in the expanded form
    H - (s h^T + h s^T)/rho + (1 + y^T h/rho) s s^T/rho, with h = H y and
    rho = s^T y, which is algebraically identical and costs O(n^2).
    """
    if not (H.ndim == 2 and H.shape[0] == H.shape[1] == s.shape[0] == y.shape[0]):
        raise ValueError("dimension mismatch in bfgs_update")
    mpnum.check_same(H, s, y)
    rho = s @ y
    if not rho > 0:
        raise CurvatureError(f"curvature condition violated: s^T y = {rho}")
    with np.errstate(over="ignore", invalid="ignore"):
        h = H @ y
        coef = (1 + (y @ h) / rho) / rho
        sh = np.multiply.outer(s, h)
        out = H - (sh + sh.T) / rho + np.multiply.outer(s, s) * coef
        out = (out + out.T) / 2
    mpnum.check_finite(out, "entry in the updated matrix")
    return out


def wolfe_conditions(fx, gx_p, ft, gt_p, t, params: WolfeParams, prec: Precision):
    """(W1, W2) flags for a trial step, given f and directional derivatives."""
    c1 = prec.decimal(params.c1)
    c2 = prec.decimal(params.c2)
    w1 = bool(ft <= fx + c1 * t * gx_p)
    w2 = bool(gt_p >= c2 * gx_p)
    return w1, w2


def wolfe_line_search(f: PiecewiseFunction, x: np.ndarray, p: np.ndarray,
                      params: WolfeParams, t0=1.0, cap: int = 100,
                      fx=None, gx=None):
    """Bracketing weak-Wolfe search: double until W1 fails, then bisect.

    Keeps [a, b] with a=0, b=inf.  If W1 fails at t then b=t; otherwise if W2
    fails then a=t; otherwise t is accepted.  The next trial is 2t while b is
    infinite and (a+b)/2 afterwards.  Gradients at trial points are those of
    the lowest-index maximizing selection.
    """
    prec = f.precision
    if fx is None or gx is None:
        fx, gx, _ = f.evaluate(x)
    gp = gx @ p
    if not gp < 0:
        raise ValueError(f"not a descent direction: grad^T p = {gp}")
    t = prec.decimal(t0)
    if not t > 0:
        raise ValueError("t0 must be positive")
    a = prec.scalar(0)
    b = None
    for trial in range(1, cap + 1):
        xt = x + p * t
        ft, gt, it = f.evaluate(xt)
        w1, w2 = wolfe_conditions(fx, gp, ft, gt @ p, t, params, prec)
        if not w1:
            b = t
        elif not w2:
            a = t
        else:
            s = xt - x
            return t, StepRecord(t, p, xt, s, gt - gx, ft, gt, it, (w1, w2), trial)
        t = t * 2 if b is None else (a + b) / 2
    raise LineSearchError(f"line search failed after {cap} trials", bracket=(a, b), t=t)


def lemma5_bound(grad_f_at_x, grad_fi_at_x, p, c2, L):
    """Lower bound on a W2-satisfying step when selection i is gradient-active at x+tp.

    (-(1 - c2) grad_f^T p + (grad_f - grad_fi)^T p) / (L |p|^2)
    """
    if not L > 0:
        raise ValueError("L must be positive")
    pp = p @ p
    if not pp > 0:
        raise ValueError("p must be nonzero")
    gp = grad_f_at_x @ p
    return (-(1 - c2) * gp + (grad_f_at_x - grad_fi_at_x) @ p) / (L * pp)


def _memory_metric(H, ref_grads):
    from .diagnostics import memory_metric
    return memory_metric(H, ref_grads)


def run(f: PiecewiseFunction, x0: np.ndarray, H0: np.ndarray, cfg: SolverConfig,
        reference_gradients: Sequence[np.ndarray] | None = None) -> RunTrace:
    """Quasi-Newton loop: p = -H g, Wolfe step, BFGS update.

    Terminations ("gradient", "max_iter", "breakdown", "line_search",
    "curvature", "nonfinite") are recorded on the trace and never raised.
    With ``restart_period = r``, H_k is reset to H0 whenever k > 0 and
    k mod r == 0.  ``reference_gradients`` enables the per-iterate memory
    metric max_i |H_k (g_i - g_1)|.
    """
    prec = cfg.precision
    mpnum.check_same(x0, H0)
    if mpnum.precision_of(x0) != prec:
        raise mpnum.PrecisionError(f"x0 built at {mpnum.precision_of(x0)}, config says {prec}")
    params = cfg.wolfe
    c2 = prec.decimal(params.c2)
    grad_tol = prec.decimal(cfg.grad_stop_tol)
    records: list[IterRecord] = []

    def make_record(k, x, fx, gx, idx, H, restarted, sets):
        sets = sets or active_sets(f, x)
        ambiguous = not (sets.is_differentiable and len(sets.grad_active) == 1)
        rec = IterRecord(k, x, fx, gx, mpnum.norm(gx, prec), idx, sets.grad_active,
                         ambiguous, restarted)
        if cfg.track_eigenvalues:
            rec.eigenvalues = mpnum.eigenvalues(H)
        if cfg.keep_matrices:
            rec.H = H
        if reference_gradients is not None:
            rec.memory_metric = _memory_metric(H, reference_gradients)
        records.append(rec)
        return rec, sets

    def finish(reason, msg=""):
        if msg:
            log.info("run stopped (%s): %s", reason, msg)
        return RunTrace(records, reason, msg, prec, cfg)

    x, H = x0, H0
    try:
        fx, gx, idx = f.evaluate(x)
    except mpnum.NonFiniteError as exc:
        return finish("nonfinite", str(exc))
    k = 0
    restarted = False
    sets = None
    while True:
        rec, sets = make_record(k, x, fx, gx, idx, H, restarted, sets)
        if cfg.differentiability == "tie" and not sets.is_differentiable:
            return finish("breakdown", f"f not differentiable at x^{k}")
        if rec.grad_norm <= grad_tol:
            return finish("gradient")
        if k >= cfg.max_iter:
            return finish("max_iter")
        p = -(H @ gx)
        try:
            t, step = wolfe_line_search(f, x, p, params, cfg.initial_trial_step,
                                        cfg.line_search_cap, fx=fx, gx=gx)
        except LineSearchError as exc:
            return finish("line_search", f"{exc} at k={k}; bracket={exc.bracket}")
        except ValueError as exc:
            return finish("line_search", f"{exc} at k={k}")
        except mpnum.NonFiniteError as exc:
            return finish("nonfinite", str(exc))
        x_new = step.x_new
        sets = active_sets(f, x_new)
        i = sets.unique_index
        if i is not None and f.selections[i].lipschitz_on is not None and p @ p > 0:
            L = f.selections[i].lipschitz_on(x, x_new)
            if L > 0:
                step.lemma5_bound = lemma5_bound(gx, f.selections[i].gradient(x), p, c2, L)
                step.lemma5_index = i
        rec.step = step
        if not step.s @ step.y > 0:
            return finish("curvature", f"s^T y <= 0 at k={k}")
        try:
            H = bfgs_update(H, step.s, step.y)
        except mpnum.NonFiniteError as exc:
            return finish("nonfinite", f"{exc} at k={k}")
        x, fx, gx, idx = x_new, step.fval_new, step.grad_new, step.index_new
        k += 1
        restarted = cfg.restart_period is not None and k % cfg.restart_period == 0
        if restarted:
            H = H0
