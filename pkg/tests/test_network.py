import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairflow.errors import InstanceError, ParameterError, ParseError, ValidationError
from fairflow.network import (Commodity, Edge, Network, TravelTimeFn, build_pigou, check,
                              parse_tntp, validate, write_tntp)

NET_HEADER = """<NUMBER OF ZONES> {n}
<NUMBER OF NODES> {n}
<FIRST THRU NODE> 1
<NUMBER OF LINKS> {m}
<END OF METADATA>

~ init term cap length fft b power speed toll type ;
"""


def tiny_net(rows, n=2):
    return NET_HEADER.format(n=n, m=len(rows)) + "\n".join(rows) + "\n"


ONE_LINK = tiny_net(["1 2 10 1 3 0.15 4 0 0 1 ;"])
ONE_TRIP = "<NUMBER OF ZONES> 2\n<END OF METADATA>\n\nOrigin 1\n 2 : 1.0;\n"


class TestTravelTimeFn:
    def test_bpr_anchor_values(self):
        fn = TravelTimeFn.from_bpr(6.0, 25900.2)
        assert fn(0.0) == 6.0
        assert fn(25900.2) == pytest.approx(1.15 * 6.0, rel=1e-15)
        assert fn.degree == 4

    @pytest.mark.parametrize("fn,deg", [
        (TravelTimeFn.affine(1.0, 2.0), 1),
        (TravelTimeFn.affine(1.0, 0.0), 0),
        (TravelTimeFn.monomial(4), 4),
        (TravelTimeFn.from_bpr(2.0, 3.0), 4),
    ])
    def test_degree(self, fn, deg):
        assert fn.degree == deg

    def test_integral_and_derivative_closed_form(self):
        fn = TravelTimeFn((1.0, 2.0, 3.0))
        assert fn.integral(2.0) == pytest.approx(2 + 4 + 8)
        assert fn.derivative(2.0) == pytest.approx(2 + 12)

    @given(st.floats(0.1, 100), st.floats(0.1, 1e4), st.floats(0, 3e4))
    def test_bpr_derivative_matches_finite_difference(self, fft, cap, x):
        fn = TravelTimeFn.from_bpr(fft, cap)
        h = 1e-6 * max(1.0, x)
        fd = (fn(x + h) - fn(max(x - h, 0.0))) / (x + h - max(x - h, 0.0))
        assert abs(fn.derivative(x) - fd) <= 1e-6 * (1 + abs(fn.derivative(x))) + 1e-6 * abs(fd)

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=5), st.floats(0, 5), st.floats(0, 5))
    def test_monotone_and_convex(self, coeffs, a, b):
        fn = TravelTimeFn(tuple(coeffs))
        lo, hi = min(a, b), max(a, b)
        assert fn(lo) <= fn(hi) + 1e-9 * (1 + abs(fn(hi)))
        mid = 0.5 * (lo + hi)
        assert fn(mid) <= 0.5 * (fn(lo) + fn(hi)) + 1e-9 * (1 + abs(fn(hi)))

    def test_bpr_rejects_bad_capacity(self):
        with pytest.raises(InstanceError):
            TravelTimeFn.from_bpr(1.0, 0.0)


class TestParse:
    def test_sioux_falls_sizes(self, sioux_falls):
        assert sioux_falls.num_vertices == 24
        assert sioux_falls.num_edges == 76
        assert sioux_falls.num_commodities == 528
        assert validate(sioux_falls) == []
        assert sioux_falls.max_degree == 4

    def test_sioux_falls_total_demand(self, sioux_falls):
        # the reference trips table totals 360600 vehicles
        assert sioux_falls.demands.sum() == pytest.approx(360600.0)

    def test_minimal_instance(self):
        net = parse_tntp(ONE_LINK, ONE_TRIP)
        assert (net.num_vertices, net.num_edges, net.num_commodities) == (2, 1, 1)
        assert net.edges[0].fn(0.0) == 3.0

    def test_accepts_file_objects(self):
        net = parse_tntp(io.StringIO(ONE_LINK), io.StringIO(ONE_TRIP))
        assert net.num_commodities == 1

    def test_empty_trips_is_valid(self):
        net = parse_tntp(ONE_LINK, "")
        assert net.num_commodities == 0

    def test_repeated_od_entries_are_summed(self):
        trips = "Origin 1\n 2 : 1.0; 2 : 2.5;\n"
        net = parse_tntp(ONE_LINK, trips)
        assert net.num_commodities == 1
        assert net.commodities[0].demand == 3.5

    def test_parallel_links_kept(self):
        net = parse_tntp(tiny_net(["1 2 1 1 1 0.15 4 0 0 1 ;", "1 2 1 1 2 0.15 4 0 0 1 ;"]),
                         ONE_TRIP)
        assert net.num_edges == 2

    @pytest.mark.parametrize("rows,line", [
        (["1 2 10 1 3 0.15"], 8),          # too few columns
        (["1 x 10 1 3 0.15 4 ;"], 8),      # non-numeric
        (["1 9 10 1 3 0.15 4 ;"], 8),      # endpoint out of range
    ])
    def test_bad_link_rows_report_line(self, rows, line):
        with pytest.raises(ParseError) as err:
            parse_tntp(tiny_net(rows), ONE_TRIP)
        assert err.value.line == line
        assert f"line {line}" in str(err.value)

    def test_link_count_mismatch(self):
        text = ONE_LINK.replace("<NUMBER OF LINKS> 1", "<NUMBER OF LINKS> 2")
        with pytest.raises(ParseError):
            parse_tntp(text, ONE_TRIP)

    def test_missing_metadata(self):
        text = ONE_LINK.replace("<FIRST THRU NODE> 1\n", "")
        with pytest.raises(ParseError):
            parse_tntp(text, ONE_TRIP)

    def test_trip_before_origin(self):
        with pytest.raises(ParseError):
            parse_tntp(ONE_LINK, " 2 : 1.0;\n")

    def test_unreachable_destination_fails_validation(self):
        net = tiny_net(["2 1 10 1 3 0.15 4 0 0 1 ;"])
        with pytest.raises(ValidationError) as err:
            parse_tntp(net, ONE_TRIP)
        assert [d.kind for d in err.value.diagnostics] == ["reachability"]

    def test_round_trip(self, sioux_falls):
        net_text, trips_text = write_tntp(sioux_falls)
        again = parse_tntp(net_text, trips_text)
        assert again.num_vertices == sioux_falls.num_vertices
        assert [(e.tail, e.head) for e in again.edges] == [(e.tail, e.head) for e in sioux_falls.edges]
        assert [e.fn.coefficients for e in again.edges] == [e.fn.coefficients for e in sioux_falls.edges]
        key = lambda c: (c.origin, c.destination)
        assert sorted(again.commodities, key=key) == sorted(sioux_falls.commodities, key=key)


class TestValidate:
    def test_negative_coefficient(self):
        net = Network(2, (Edge(0, 1, TravelTimeFn((1.0, -1.0))),), (Commodity(0, 1, 1.0),))
        assert [d.kind for d in validate(net)] == ["coefficient"]

    def test_unreachable(self):
        net = Network(3, (Edge(0, 1, TravelTimeFn((1.0,))),), (Commodity(0, 2, 1.0),))
        assert [d.kind for d in validate(net)] == ["reachability"]

    def test_nonpositive_demand(self):
        net = Network(2, (Edge(0, 1, TravelTimeFn((1.0,))),), (Commodity(0, 1, 0.0),))
        assert [d.kind for d in validate(net)] == ["demand"]

    def test_self_loop_only_a_warning(self):
        net = Network(2, (Edge(0, 1, TravelTimeFn((1.0,))), Edge(1, 1, TravelTimeFn((1.0,)))),
                      (Commodity(0, 1, 1.0),))
        assert validate(net) == []
        assert [d.severity for d in validate(net, include_warnings=True)] == ["warning"]

    def test_check_raises(self):
        net = Network(2, (Edge(0, 1, TravelTimeFn((1.0, -1.0))),), (Commodity(0, 1, 1.0),))
        with pytest.raises(ValidationError):
            check(net)


class TestPigou:
    def test_toy_network(self, pigou):
        assert pigou.num_edges == 2
        assert pigou.edges[0].fn(0.7) == 1.0
        assert pigou.edges[1].fn(0.7) == pytest.approx(0.7)

    def test_tightness_instance(self):
        net = build_pigou(4, 0.01)
        assert net.edges[0].fn(1.0) == pytest.approx(1.01)
        assert net.edges[1].fn(0.5) == pytest.approx(0.0625)
        assert net.max_degree == 4

    @pytest.mark.parametrize("args", [(1, 0.0, 0.0), (0, 0.0, 1.0), (1.5, 0.0, 1.0), (1, -1.0, 1.0)])
    def test_rejects_bad_parameters(self, args):
        with pytest.raises(ParameterError):
            build_pigou(*args)


def test_json_round_trip(sioux_falls):
    again = Network.from_json(sioux_falls.to_json())
    assert again.edges == sioux_falls.edges
    assert again.commodities == sioux_falls.commodities


def test_scaled_network_scales_travel_times(sioux_falls):
    x = np.linspace(0, 5000, sioux_falls.num_edges)
    assert np.allclose(sioux_falls.scaled(3.0).travel_times(x), 3.0 * sioux_falls.travel_times(x))


@settings(max_examples=30)
@given(st.floats(0, 1e5))
def test_vectorised_times_match_scalar(x):
    net = build_pigou(4, 0.3)
    xs = np.array([x, 2 * x])
    assert np.allclose(net.travel_times(xs), [e.fn(v) for e, v in zip(net.edges, xs)])
    assert np.allclose(net.travel_time_derivatives(xs),
                       [e.fn.derivative(v) for e, v in zip(net.edges, xs)])
    assert np.allclose(net.travel_time_integrals(xs),
                       [e.fn.integral(v) for e, v in zip(net.edges, xs)])
