import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from netcca.exceptions import Infeasible, TooLarge
from netcca.graph import FeatureGraph, WeightRule
from netcca.linalg import RegCovOperator, standardize
from netcca.penalty import ConstraintData, PenaltyConfig, compile_subproblem
from netcca.solver import MAX_ITERATIONS, OPTIMAL, SolverSettings, reference_solve, solve


def random_graph(rng, p, m):
    edges = set()
    while len(edges) < m:
        i, j = rng.choice(p, 2, replace=False)
        edges.add((min(i, j), max(i, j)))
    return FeatureGraph.from_edges(p, sorted(edges))


def instance(seed, family, variant, p, m, tie_break=0.0, tau_frac=None):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, p, m)
    c = rng.normal(size=p)
    frac = rng.uniform(0.05, 0.3) if tau_frac is None else tau_frac
    cov = RegCovOperator(standardize(rng.normal(size=(10, p))).values) if variant == "A" else None
    cd = ConstraintData(c, rng.uniform(0.3, 0.9), frac * np.abs(c).max(), cov)
    return compile_subproblem(PenaltyConfig(family, variant, 0.5, 2.0, tie_break), g, cd)


class TestExamples:
    def test_zero_feasible(self):
        cd = ConstraintData(np.array([0.1, -0.2]), 1.0, 0.5)
        sol = solve(compile_subproblem(PenaltyConfig(), FeatureGraph.from_edges(2, [(0, 1)]), cd))
        assert sol.status == OPTIMAL
        assert sol.objective == 0
        assert_allclose(sol.primal, 0)

    def test_hand_solved_vertex(self):
        # v0 in [0.75, 1.25], v1 in [-0.25, 0.25]; min 0.5 |v0 - v1| sits at (0.75, 0.25)
        g = FeatureGraph.from_edges(2, [(0, 1)], WeightRule("unit"))
        cd = ConstraintData(np.array([1.0, 0.0]), 1.0, 0.25)
        prog = compile_subproblem(PenaltyConfig("fused", "B", 0.5, tie_break=0.0), g, cd)
        for sol in (solve(prog), reference_solve(prog)):
            assert_allclose(sol.primal, [0.75, 0.25], atol=1e-7)
            assert sol.objective == pytest.approx(0.25, abs=1e-7)

    @pytest.mark.parametrize("variant", ["A", "B"])
    def test_fused_lp_matches_reference(self, variant):
        for seed in range(6):
            prog = instance(seed, "fused", variant, 8, 3)
            assert solve(prog).objective == pytest.approx(reference_solve(prog).objective, abs=1e-6)

    @pytest.mark.parametrize("variant", ["A", "B"])
    def test_grouped_matches_subgradient(self, variant):
        for seed in range(3):
            prog = instance(seed, "grouped", variant, 6, 2)
            assert solve(prog).objective == pytest.approx(reference_solve(prog).objective, abs=1e-4)


class TestReference:
    def test_size_cap(self):
        prog = instance(0, "fused", "B", 30, 10)
        with pytest.raises(TooLarge):
            reference_solve(prog)

    def test_zero_when_unconstrained(self):
        prog = instance(0, "grouped", "B", 6, 2, tau_frac=1.0)
        assert reference_solve(prog).objective == 0


class TestProperties:
    @pytest.mark.parametrize("family", ["fused", "grouped"])
    def test_feasible_and_kkt(self, family):
        for seed in range(5):
            prog = instance(seed, family, "A", 12, 8, tie_break=1e-3)
            sol = solve(prog)
            assert sol.optimal
            assert sol.kkt_residual <= 1e-7
            cd = prog.constraint
            assert cd.residual(sol.primal) <= cd.tau + 1e-7

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(3)
        g = random_graph(rng, 10, 6)
        c = rng.normal(size=10)
        values = []
        for frac in np.linspace(0.0, 1.0, 9):
            cd = ConstraintData(c, 0.7, frac * np.abs(c).max())
            values.append(solve(compile_subproblem(PenaltyConfig("fused"), g, cd)).objective)
        assert all(b <= a + 1e-7 for a, b in zip(values, values[1:]))
        assert values[-1] == 0

    def test_scaling_equivariance(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 9, 5)
        c = rng.normal(size=9)
        cfg = PenaltyConfig("fused", tie_break=1e-3)
        base = solve(compile_subproblem(cfg, g, ConstraintData(c, 0.6, 0.2))).objective
        for k in (0.5, 3.0):
            scaled = solve(compile_subproblem(cfg, g, ConstraintData(k * c, 0.6, k * 0.2))).objective
            assert scaled == pytest.approx(k * base, rel=1e-6, abs=1e-9)

    def test_deterministic(self):
        prog = instance(7, "grouped", "A", 15, 9, tie_break=1e-3)
        a, b = solve(prog), solve(prog)
        assert a.iterations == b.iterations
        assert np.array_equal(a.primal, b.primal)

    def test_warm_start_same_optimum(self):
        prog = instance(8, "fused", "B", 14, 10, tie_break=1e-3)
        cold = solve(prog)
        warm = solve(prog, warm_start=cold.primal, warm_dual=cold.info.get("dual"))
        assert warm.objective == pytest.approx(cold.objective, abs=1e-7)
        bad = solve(prog, warm_start=np.full(14, 5.0))
        assert bad.objective == pytest.approx(cold.objective, abs=1e-7)

    def test_sparse_path_agrees(self):
        for variant in "AB":
            prog = instance(9, "grouped", variant, 20, 12, tie_break=1e-3)
            dense = solve(prog)
            sparse = solve(prog, SolverSettings(dense_threshold=0))
            assert sparse.info["linear_solver"].startswith("sparse")
            assert sparse.objective == pytest.approx(dense.objective, abs=1e-6)

    def test_iteration_budget(self):
        prog = instance(10, "grouped", "A", 20, 15, tie_break=1e-3)
        sol = solve(prog, SolverSettings(max_iterations=3, polish=False))
        assert sol.status == MAX_ITERATIONS
        assert sol.primal.shape == (20,)

    def test_infeasible(self):
        cd = ConstraintData(np.array([1.0, 0.0]), 0.0, 0.5)
        with pytest.raises(Infeasible):
            solve(compile_subproblem(PenaltyConfig(), FeatureGraph.empty(2), cd))

    def test_tau_zero_equality(self):
        rng = np.random.default_rng(11)
        c = rng.normal(size=6)
        cd = ConstraintData(c, 0.5, 0.0)
        sol = solve(compile_subproblem(PenaltyConfig("fused"), random_graph(rng, 6, 3), cd))
        assert_allclose(sol.primal, c / 0.5, atol=1e-7)

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            SolverSettings(tolerance=0)
        with pytest.raises(ValueError):
            SolverSettings(max_iterations=0)


@given(st.integers(0, 100_000), st.sampled_from(["A", "B"]))
def test_fused_agrees_with_lp_property(seed, variant):
    prog = instance(seed, "fused", variant, 7, 4)
    assert solve(prog).objective == pytest.approx(reference_solve(prog).objective, abs=1e-6)
