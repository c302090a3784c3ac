"""Monitors for the eigenvalue behavior of BFGS on max-type functions."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import mpnum
from .problems import MaxInstance, instance_as_piecewise
from .solver import RunTrace, SolverConfig, run


def memory_metric(H: np.ndarray, grads_at_ref: Sequence[np.ndarray]):
    """max_{i>=2} |H (g_i - g_1)|; zero for a single gradient."""
    if len(grads_at_ref) == 0:
        raise ValueError("need at least one reference gradient")
    prec = mpnum.precision_of(H)
    g1 = grads_at_ref[0]
    best = prec.scalar(0)
    for g in grads_at_ref[1:]:
        if g.shape != g1.shape or H.shape[1] != g.shape[0]:
            raise ValueError("dimension mismatch in memory_metric")
        v = mpnum.norm(H @ (g - g1), prec)
        if v > best:
            best = v
    return best


def exploration_metric(Hs: Sequence[np.ndarray], ys: Sequence[np.ndarray], m: int):
    """max over k' in 1..m-2 and k in 0..k'-1 of |H_{k'} y^k|.

    ``Hs[k]`` is H_k and ``ys[k]`` is y^k.  The index set is empty for
    m <= 2, in which case the value is 0.
    """
    if m <= 2:
        if Hs:
            return mpnum.precision_of(Hs[0]).scalar(0)
        return 0.0
    if len(Hs) < m - 1 or len(ys) < m - 2:
        raise ValueError(f"need H_0..H_{m - 2} and y^0..y^{m - 3}; got {len(Hs)} and {len(ys)}")
    prec = mpnum.precision_of(Hs[0])
    best = prec.scalar(0)
    for kp in range(1, m - 1):
        for k in range(kp):
            v = mpnum.norm(Hs[kp] @ ys[k], prec)
            if v > best:
                best = v
    return best


def secant_lower_bound(Hs, ys, m: int):
    """max_{k'} |H_{k'} y^{k'-1}|, a lower bound for the exploration metric."""
    if m <= 2:
        return 0.0
    prec = mpnum.precision_of(Hs[0])
    return max(mpnum.norm(Hs[kp] @ ys[kp - 1], prec) for kp in range(1, m - 1))


@dataclass
class B1Report:
    dim_N: int
    lower: list            # lambda_{dim_N}^k (None when dim_N == 0)
    gap: list              # lambda_{dim_N+1}^k
    top: list              # lambda_n^k
    memory: list
    sigma_L: object
    sigma_U: object
    visits: dict = field(default_factory=dict)


def eigen_partition_series(trace: RunTrace, dim_N: int) -> B1Report:
    """Split each spectrum into the dim_N smallest and the rest.

    sigma_L is the minimum over k of lambda_{dim_N+1}^k, sigma_U the maximum
    of lambda_n^k.
    """
    spectra = [r.eigenvalues for r in trace.records]
    if any(s is None for s in spectra):
        raise ValueError("trace has no eigenvalues (track_eigenvalues was off)")
    n = len(spectra[0])
    if not 0 <= dim_N < n:
        raise ValueError(f"need 0 <= dim_N < n={n}, got {dim_N}")
    lower = [s[dim_N - 1] if dim_N > 0 else None for s in spectra]
    gap = [s[dim_N] for s in spectra]
    top = [s[-1] for s in spectra]
    visits: dict[int, int] = {}
    for r in trace.records:
        if not r.ambiguous:
            i = r.grad_active[0]
            visits[i] = visits.get(i, 0) + 1
    return B1Report(dim_N, lower, gap, top, [r.memory_metric for r in trace.records],
                    min(gap), max(top), visits)


class VisitOrder(NamedTuple):
    order: list
    explored_all: bool
    ambiguous: int


def visit_order(trace: RunTrace, m: int, start: int = 0) -> VisitOrder:
    """Selections met at iterates start..start+m-1; explored_all if all m appear.

    Iterates with an ambiguous gradient-active set are left out of ``order``
    and counted in ``ambiguous``.
    """
    window = trace.records[start:start + m]
    if len(window) < m:
        raise ValueError(f"trace has {len(trace.records) - start} iterates from {start}, need {m}")
    order, amb = [], 0
    for r in window:
        if r.ambiguous:
            amb += 1
        else:
            order.append(r.grad_active[0])
    return VisitOrder(order, len(set(order)) == m, amb)


@dataclass
class B2Record:
    log10_dist: float
    min_partition_eig: object
    max_eig: object
    exploration: object
    order: list
    explored_all: bool
    ambiguous: int
    termination: str
    trace: RunTrace | None = None


@dataclass
class B2Report:
    records: list[B2Record]

    def __len__(self):
        return len(self.records)


def b2_record_from_trace(trace: RunTrace, m: int, log10_dist: float) -> B2Record:
    """Condense one short run into the exploration statistics.

    min_k lambda_{k+1}^k and max_k lambda_n^k over k = 0..m-2, the exploration
    metric, and the visit order over the first m iterates.
    """
    recs = trace.records
    upto = min(m - 1, len(recs))
    lows = [recs[k].eigenvalues[k] for k in range(upto)]
    tops = [recs[k].eigenvalues[-1] for k in range(upto)]
    Hs = [r.H for r in recs]
    ys = [r.step.y for r in recs if r.step is not None]
    complete = len(recs) >= m
    explo = exploration_metric(Hs, ys, m) if complete else None
    if complete:
        vo = visit_order(trace, m)
    else:
        vo = VisitOrder([r.grad_active[0] for r in recs if not r.ambiguous], False,
                        sum(r.ambiguous for r in recs))
    return B2Record(log10_dist, min(lows), max(tops), explo, vo.order, vo.explored_all,
                    vo.ambiguous, trace.termination, trace)


def b2_sweep(inst: MaxInstance, initial_points: Sequence[np.ndarray], cfg: SolverConfig) -> B2Report:
    """Run m-1 BFGS iterations from each initial point with H0 = I."""
    prec = inst.precision
    if cfg.precision != prec:
        raise mpnum.PrecisionError("config precision differs from the instance precision")
    m = inst.m
    f = instance_as_piecewise(inst)
    cfg = replace(cfg, max_iter=max(m - 1, 1), track_eigenvalues=True,
                  keep_matrices=True, restart_period=None)
    H0 = prec.identity(inst.n)
    out = []
    for x0 in initial_points:
        trace = run(f, x0, H0, cfg)
        dist = prec.log10(mpnum.norm(x0 - inst.x_star, prec))
        out.append(b2_record_from_trace(trace, m, dist))
    return B2Report(out)


def period_summary(trace: RunTrace, period: int, x_star_value=0):
    """Per restart period: (index, distinct selections met, f-gap at its end).

    Period j covers iterates j*r .. j*r + r - 1; its end value is f(x^{(j+1) r}),
    reached after the period's r steps.  A selection counts as met when it is
    the one whose gradient the solver received (``active_index``), so iterates
    that are ambiguous under the tie tolerance still contribute.
    """
    recs = trace.records
    rows = []
    j = 0
    while (j + 1) * period < len(recs):
        chunk = recs[j * period:(j + 1) * period]
        seen = {r.active_index for r in chunk}
        rows.append((j, len(seen), recs[(j + 1) * period].fval - x_star_value))
        j += 1
    return rows
