import dataclasses

import numpy as np
import pytest

from fairflow.assignment import SolverConfig, solve
from fairflow.errors import EnforceabilityError, ParameterError, RestrictionError
from fairflow.network import Commodity, Edge, Network, TravelTimeFn, build_pigou
from fairflow.pricing import (TollVector, UserClass, check_tightness, classes_from_json,
                              classes_to_json, complementary_slackness, dual_tolls,
                              heterogeneous_lp, marginal_tolls, unrecorded_path_slack,
                              verify_enforcement)

from conftest import partitions, small_parallel_instances

TIGHT = SolverConfig(target_relative_gap=1e-6, max_iterations=300)
# dual tolls sit at a degenerate LP vertex and tie many paths, so the tolled
# re-solve needs a finer gap, more path passes and a lower record threshold
TOLLED = SolverConfig(target_relative_gap=1e-8, max_iterations=1000, master_passes=50,
                      path_record_threshold=1e-6)


def certificates_hold(net, lp, tolls):
    return (check_tightness(lp).tight and complementary_slackness(lp, tolls) <= 1e-6
            and unrecorded_path_slack(net, lp, tolls) >= -1e-6)


class TestMarginal:
    def test_zero_at_ue(self, pigou):
        assert not marginal_tolls(pigou, solve(pigou, 0.0)).tolls.any()

    def test_pigou_half(self, pigou):
        tv = marginal_tolls(pigou, solve(pigou, 0.5))
        assert tv.tolls == pytest.approx([0.0, 1 / 3], abs=1e-6)
        assert tv.provenance == "marginal_cost"

    def test_pigou_so(self, pigou):
        assert marginal_tolls(pigou, solve(pigou, 1.0)).tolls == pytest.approx([0, 0.5], abs=1e-6)

    def test_csv(self, pigou):
        lines = marginal_tolls(pigou, solve(pigou, 0.5)).to_csv().splitlines()
        assert lines == ["edge_id,toll,provenance,alpha", "0,0,marginal_cost,0.5",
                         "1,0.333333333333,marginal_cost,0.5"]

    def test_negative_toll_rejected(self):
        with pytest.raises(EnforceabilityError):
            TollVector(np.array([-1e-3]), "lp_dual", 0.5)
        assert TollVector(np.array([-1e-12]), "lp_dual", 0.5).tolls[0] == 0.0


class TestEnforcement:
    def test_pigou(self, pigou):
        fs = solve(pigou, 0.5)
        rep = verify_enforcement(pigou, fs, np.array([0.0, 1 / 3]))
        assert rep.passed and rep.flow_deviation <= 1e-6

    def test_ue_without_tolls(self, sioux_falls):
        fs = solve(sioux_falls, 0.0)
        rep = verify_enforcement(sioux_falls, fs, np.zeros(sioux_falls.num_edges))
        assert rep.passed

    def test_wrong_tolls_fail(self, pigou):
        rep = verify_enforcement(pigou, solve(pigou, 0.5), np.zeros(2))
        assert not rep.passed

    def test_sioux_falls_half(self, sioux_falls):
        fs = solve(sioux_falls, 0.5, TIGHT)
        rep = verify_enforcement(sioux_falls, fs, marginal_tolls(sioux_falls, fs), TIGHT)
        assert rep.passed and rep.flow_deviation <= 1e-3

    def test_requires_homogeneous_users(self):
        net = Network(2, (Edge(0, 1, TravelTimeFn.affine(1, 1)),),
                      (Commodity(0, 1, 1.0, 1.0), Commodity(0, 1, 1.0, 2.0)))
        with pytest.raises(ParameterError):
            verify_enforcement(net, solve(net, 0.5), np.zeros(1))


def enumerate_two_class_pigou(x, t, v, demand):
    """Vertices of {d >= 0 : class demand rows, edge loads = x} for two classes and two edges.

    With tight capacities the polytope is the segment d_11 = a, d_12 = demand_1 - a,
    d_21 = x_1 - a, d_22 = demand_2 - x_1 + a; its vertices are the ends of the a-range.
    """
    lo = max(0.0, x[0] - demand[1])
    hi = min(demand[0], x[0])
    best = np.inf
    for a in (lo, hi):
        d = np.array([[a, demand[0] - a], [x[0] - a, demand[1] - x[0] + a]])
        best = min(best, sum(v[c] * (d[c] @ t) for c in range(2)))
    return best


class TestHeterogeneousLP:
    def test_single_class_pigou(self, pigou):
        fs = solve(pigou, 0.5)
        lp = heterogeneous_lp(pigou, fs)
        by_path = {p: d for (_, p), d in zip(lp.columns, lp.primal)}
        assert by_path[(0,)] == pytest.approx(1 / 3, abs=1e-6)
        assert by_path[(1,)] == pytest.approx(2 / 3, abs=1e-6)
        rep = check_tightness(lp)
        assert rep.tight and np.abs(rep.slacks).max() <= 1e-9

    def test_dual_tolls_pigou(self, pigou):
        fs = solve(pigou, 0.5)
        lp = heterogeneous_lp(pigou, fs)
        tv = dual_tolls(lp, 0.5)
        assert tv.tolls == pytest.approx(marginal_tolls(pigou, fs).tolls, abs=1e-6)
        assert tv.provenance == "lp_dual"
        assert lp.demand_duals[0] == pytest.approx(1.0, abs=1e-6)

    def test_two_classes_pigou(self, pigou):
        fs = solve(pigou, 0.5)
        classes = [UserClass(0, 1.0, 0.5), UserClass(0, 2.0, 0.5)]
        lp = heterogeneous_lp(pigou, fs, classes)
        t = pigou.travel_times(fs.edge_flow)
        expected = enumerate_two_class_pigou(fs.edge_flow, t, [1.0, 2.0], [0.5, 0.5])
        assert lp.objective == pytest.approx(expected, abs=1e-9)
        assert lp.objective == pytest.approx(10 / 9, abs=1e-5)
        assert lp.dual_objective == pytest.approx(lp.objective, rel=1e-8)
        assert certificates_hold(pigou, lp, dual_tolls(lp, 0.5))

    def test_single_path_instance(self):
        net = Network(3, (Edge(0, 1, TravelTimeFn.affine(1, 1)), Edge(1, 2, TravelTimeFn.affine(2, 0))),
                      (Commodity(0, 2, 4.0),))
        lp = heterogeneous_lp(net, solve(net, 0.3))
        assert lp.primal.tolist() == pytest.approx([4.0])
        assert check_tightness(lp).tight

    def test_ue_flow_gives_valid_tolls(self, sioux_falls):
        fs = solve(sioux_falls, 0.0, TIGHT)
        lp = heterogeneous_lp(sioux_falls, fs)
        tv = dual_tolls(lp, 0.0)
        assert certificates_hold(sioux_falls, lp, tv)

    def test_inflated_capacity_is_not_tight(self, pigou):
        lp = heterogeneous_lp(pigou, solve(pigou, 0.5))
        cap = lp.capacities.copy()
        cap[1] += 1.0
        rep = check_tightness(dataclasses.replace(lp, capacities=cap))
        assert not rep.tight
        assert rep.slacks[1] == pytest.approx(1.0)
        with pytest.raises(EnforceabilityError):
            dual_tolls(dataclasses.replace(lp, capacities=cap))

    def test_restricted_lp_infeasible(self, pigou):
        fs = solve(pigou, 0.5)
        fs.recorded_paths[0] = [((1,), 1.0)]
        with pytest.raises(RestrictionError):
            heterogeneous_lp(pigou, fs, column_generation=False)

    def test_column_generation_recovers_missing_path(self, pigou):
        fs = solve(pigou, 0.5)
        fs.recorded_paths[0] = [((1,), 1.0)]
        # capacities allow the single path only after the missing edge-1 path is priced in
        fs.edge_flow[:] = [0.0, 1.0]
        lp = heterogeneous_lp(pigou, fs)
        assert certificates_hold(pigou, lp, dual_tolls(lp))

    def test_scaling_values_of_time_scales_tolls(self, pigou):
        fs = solve(pigou, 0.5)
        base = [UserClass(0, 1.0, 0.5), UserClass(0, 2.0, 0.5)]
        lp = heterogeneous_lp(pigou, fs, base)
        tau = dual_tolls(lp).tolls
        for c in (0.5, 3.0):
            scaled = [UserClass(u.commodity, c * u.value_of_time, u.share) for u in base]
            lp_c = heterogeneous_lp(pigou, fs, scaled)
            assert certificates_hold(pigou, lp_c, c * tau)

    @pytest.mark.parametrize("name,net", list(small_parallel_instances().items()))
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.6, 1.0])
    def test_tight_on_parallel_networks(self, name, net, alpha):
        fs = solve(net, alpha)
        for classes in partitions(net).values():
            lp = heterogeneous_lp(net, fs, classes)
            assert certificates_hold(net, lp, dual_tolls(lp, alpha))

    @pytest.mark.parametrize("classes", [
        [UserClass(0, 1.0, 0.5)],
        [UserClass(0, 1.0, 0.5), UserClass(0, -1.0, 0.5)],
        [UserClass(3, 1.0, 1.0)],
    ])
    def test_bad_classes(self, pigou, classes):
        with pytest.raises(ParameterError):
            heterogeneous_lp(pigou, solve(pigou, 0.5), classes)

    def test_classes_json(self):
        classes = [UserClass(0, 1.0, 0.25), UserClass(0, 2.0, 0.75)]
        assert classes_from_json(classes_to_json(classes)) == classes
        assert classes_from_json('[{"commodity": 0, "value_of_time": 1, "share": 1}]') == \
            [UserClass(0, 1.0, 1.0)]
        with pytest.raises(ParameterError):
            classes_from_json('[{"commodity": 0}]')


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("part", ["single", "two", "three"])
def test_sioux_falls_tight_and_certified(sioux_falls, alpha, part):
    fs = solve(sioux_falls, alpha)
    lp = heterogeneous_lp(sioux_falls, fs, partitions(sioux_falls)[part])
    assert certificates_hold(sioux_falls, lp, dual_tolls(lp, alpha))


@pytest.mark.slow
def test_dual_and_marginal_tolls_induce_same_flow(sioux_falls):
    fs = solve(sioux_falls, 0.5, TIGHT)
    lp = heterogeneous_lp(sioux_falls, fs)
    a = verify_enforcement(sioux_falls, fs, dual_tolls(lp, 0.5), TOLLED)
    b = verify_enforcement(sioux_falls, fs, marginal_tolls(sioux_falls, fs), TOLLED)
    assert a.flow_ok and b.flow_ok
