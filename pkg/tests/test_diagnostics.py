import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsbfgs import diagnostics, mpnum, piecewise, problems, solver
from nsbfgs.mpnum import Precision
from nsbfgs.solver import IterRecord, RunTrace, SolverConfig


def fake_trace(indices, eigs=None, fvals=None, ambiguous=()):
    recs = []
    for k, i in enumerate(indices):
        recs.append(IterRecord(k, np.zeros(1), fvals[k] if fvals else 0.0, np.zeros(1), 0.0, i,
                               (i,) if k not in ambiguous else (i, i + 1), k in ambiguous, False,
                               eigenvalues=None if eigs is None else np.asarray(eigs[k])))
    return RunTrace(recs, "max_iter")


@pytest.fixture(scope="module")
def inst():
    return problems.generate_max_instance(10, 6, 0)


class TestMemoryMetric:
    def test_single_gradient(self):
        assert diagnostics.memory_metric(np.eye(3), [np.ones(3)]) == 0

    def test_zero_matrix(self, inst):
        assert diagnostics.memory_metric(np.zeros((10, 10)), list(inst.g)) == 0

    def test_hand_value(self):
        assert diagnostics.memory_metric(np.eye(2), [np.zeros(2), np.array([3.0, 4.0])]) == 5.0

    def test_errors(self):
        with pytest.raises(ValueError):
            diagnostics.memory_metric(np.eye(2), [])
        with pytest.raises(ValueError):
            diagnostics.memory_metric(np.eye(2), [np.zeros(2), np.zeros(3)])

    def test_vanishes_on_kernel(self, inst):
        grads = list(inst.g)
        basis, _ = piecewise.nspace_basis(grads)
        U = np.vstack(basis)
        P = np.eye(10) - U.T @ U          # projector onto the complement of the span
        assert diagnostics.memory_metric(P, grads) <= 1e-12 * max(np.linalg.norm(g) for g in grads)


class TestExplorationMetric:
    def test_small_m(self):
        assert diagnostics.exploration_metric([], [], 2) == 0
        assert diagnostics.exploration_metric([np.eye(2)], [], 1) == 0

    def test_hand_value(self):
        assert diagnostics.exploration_metric([np.eye(2), 2 * np.eye(2)], [np.array([1.0, 0.0])], 3) == 2.0

    def test_too_short(self):
        with pytest.raises(ValueError):
            diagnostics.exploration_metric([np.eye(2)], [np.ones(2)], 4)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(3, 7), st.integers(0, 10**6), st.floats(-8, 0))
    def test_secant_lower_bound(self, m, seed, log_dist):
        inst = problems.generate_max_instance(m + 2, m, seed)
        f = problems.instance_as_piecewise(inst)
        x0 = problems.initial_points_logspaced(inst.x_star, 2, log_dist, log_dist + 1, seed)[0]
        cfg = SolverConfig(max_iter=m - 1, keep_matrices=True)
        trace = solver.run(f, x0, np.eye(m + 2), cfg)
        if len(trace.records) < m:
            return
        Hs = [r.H for r in trace.records]
        ys = [s.y for s in trace.steps]
        low = diagnostics.secant_lower_bound(Hs, ys, m)
        s_max = max(np.linalg.norm(s.s) for s in trace.steps[:m - 2])
        assert diagnostics.exploration_metric(Hs, ys, m) >= low
        assert abs(low - s_max) <= 1e-8 * s_max + 64 * np.finfo(float).eps * max(
            np.linalg.norm(H) * np.linalg.norm(y) for H, y in zip(Hs[1:], ys))


class TestEigenPartition:
    def test_constant_identity(self):
        rep = diagnostics.eigen_partition_series(fake_trace([0] * 4, eigs=[[1.0] * 3] * 4), 1)
        assert rep.sigma_L == rep.sigma_U == 1.0

    def test_smooth_run(self):
        f = problems.quadratic_problem(problems.random_spd(4, 1))
        trace = solver.run(f, problems.random_start(4, 2), np.eye(4), SolverConfig(max_iter=6))
        rep = diagnostics.eigen_partition_series(trace, 0)
        assert rep.sigma_L == min(r.eigenvalues[0] for r in trace.records) > 0
        assert rep.lower == [None] * len(trace)
        assert rep.sigma_L <= rep.sigma_U

    def test_partition_with_repeated_eigenvalues(self):
        eigs = [[1e-9, 1.0, 1.0, 2.0], [1e-10, 1.0, 1.0, 3.0]]
        rep = diagnostics.eigen_partition_series(fake_trace([0, 1], eigs=eigs), 1)
        assert rep.lower == [1e-9, 1e-10] and rep.gap == [1.0, 1.0] and rep.top == [2.0, 3.0]
        assert rep.visits == {0: 1, 1: 1}

    def test_errors(self):
        with pytest.raises(ValueError):
            diagnostics.eigen_partition_series(fake_trace([0], eigs=[[1.0, 2.0]]), 2)
        with pytest.raises(ValueError):
            diagnostics.eigen_partition_series(fake_trace([0]), 0)


class TestVisitOrder:
    def test_single_piece(self):
        assert diagnostics.visit_order(fake_trace([0]), 1).explored_all

    def test_order_and_flag(self):
        vo = diagnostics.visit_order(fake_trace([2, 0, 1, 1]), 3)
        assert vo.order == [2, 0, 1] and vo.explored_all and vo.ambiguous == 0
        assert not diagnostics.visit_order(fake_trace([2, 2, 1]), 3).explored_all

    def test_ambiguous_iterates_are_excluded(self):
        vo = diagnostics.visit_order(fake_trace([0, 1, 2], ambiguous={1}), 3)
        assert vo.order == [0, 2] and vo.ambiguous == 1 and not vo.explored_all

    def test_too_short(self):
        with pytest.raises(ValueError):
            diagnostics.visit_order(fake_trace([0, 1]), 3)

    @given(st.lists(st.integers(0, 3), min_size=4, max_size=12))
    def test_deterministic_and_prefix_stable(self, idx):
        tr = fake_trace(idx)
        first = diagnostics.visit_order(tr, 4)
        assert first == diagnostics.visit_order(tr, 4)
        for cut in range(4, len(idx) + 1):
            shorter = RunTrace(tr.records[:cut], "max_iter")
            assert diagnostics.visit_order(shorter, 4) == first


class TestB2:
    def test_single_far_point(self, inst):
        pts = problems.initial_points_logspaced(inst.x_star, 2, 1, 2, 0)[1:]
        rep = diagnostics.b2_sweep(inst, pts, SolverConfig())
        assert len(rep) == 1
        r = rep.records[0]
        assert abs(r.log10_dist - 2) < 1e-12
        assert r.termination == "max_iter" and len(r.order) + r.ambiguous == 6
        assert r.min_partition_eig > 0 and r.max_eig >= r.min_partition_eig

    def test_replay(self, inst):
        pts = problems.initial_points_logspaced(inst.x_star, 4, -8, 1, 2)
        rep = diagnostics.b2_sweep(inst, pts, SolverConfig())
        for r in rep.records:
            again = diagnostics.b2_record_from_trace(r.trace, inst.m, r.log10_dist)
            assert again == r

    def test_close_points_explore_all_pieces(self, inst):
        pts = problems.initial_points_logspaced(inst.x_star, 5, -7, -5, 4)
        rep = diagnostics.b2_sweep(inst, pts, SolverConfig())
        assert all(r.explored_all for r in rep.records)

    def test_ties_below_machine_resolution_are_flagged(self, inst):
        # f ~ 1e-12 is inside the default 1e-10 tie tolerance: no index is guessed
        pts = problems.initial_points_logspaced(inst.x_star, 2, -12, -11, 4)[:1]
        r = diagnostics.b2_sweep(inst, pts, SolverConfig()).records[0]
        assert r.ambiguous == 6 and r.order == [] and not r.explored_all

    def test_extended_precision_resolves_close_points(self):
        prec = Precision(60)
        inst = problems.generate_max_instance(10, 6, 0, prec)
        pts = problems.initial_points_logspaced(inst.x_star, 2, -12, -11, 4)[:1]
        r = diagnostics.b2_sweep(inst, pts, SolverConfig(precision=prec)).records[0]
        assert r.ambiguous == 0 and r.explored_all

    def test_precision_mismatch(self, inst):
        with pytest.raises(mpnum.PrecisionError):
            diagnostics.b2_sweep(inst, [inst.x_star], SolverConfig(precision=Precision(40)))


class TestPeriods:
    def test_hand_trace(self):
        tr = fake_trace([0, 1, 2, 0, 0, 1, 2], fvals=[7.0, 6, 5, 4, 3, 2, 1])
        assert diagnostics.period_summary(tr, 3) == [(0, 3, 4.0), (1, 2, 1.0)]

    def test_ambiguous_iterates_still_count(self):
        tr = fake_trace([0, 1, 2, 0], fvals=[4.0, 3, 2, 1], ambiguous={1})
        assert diagnostics.period_summary(tr, 3) == [(0, 3, 1.0)]

    def test_restart_run(self):
        inst = problems.generate_max_instance(12, 8, 0)
        f = problems.instance_as_piecewise(inst)
        cfg = SolverConfig(wolfe=solver.WolfeParams(0.5, 0.75), max_iter=80, restart_period=8,
                           track_eigenvalues=False)
        trace = solver.run(f, problems.random_start(12, (0, 1)), np.eye(12), cfg)
        rows = diagnostics.period_summary(trace, 8)
        assert len(rows) == 10
        gaps = [g for _, _, g in rows]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
