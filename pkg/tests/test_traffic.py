"""Tests for workload generation, trace I/O and PHV routing."""

from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from vmtsim.core import SINK, SOURCE, Key, Phv, SeededRng
from vmtsim.optimizer.cfg import CfgGraph, chain_cfg
from vmtsim.traffic import (
    FlowSizeDistribution,
    apportion,
    bind_rule_keys,
    format_trace,
    gen_ruleset,
    gen_trace,
    load_trace,
    make_distribution,
    parse_trace,
    ramp_profile,
    route_phv,
    step_profile,
    write_trace,
)
from vmtsim.utils.hashing import hash32
from vmtsim.utils.rules import FieldSpec, Prefix, RuleError, match_rule, split_key

DST = [FieldSpec("dst", 32)]
MS = 1_000_000


class TestApportion:
    """Tests for apportion."""

    def test_largest_remainder(self):
        """Test the split sums to the count."""
        assert apportion(10, {8: 1, 16: 1, 24: 1}) == {8: 4, 16: 3, 24: 3}

    def test_no_weight(self):
        """Test an all-zero histogram raises."""
        with pytest.raises(RuleError):
            apportion(5, {8: 0})


class TestGenRuleset:
    """Tests for gen_ruleset."""

    def test_single_rule(self):
        """Test count 1 gives one rule."""
        assert len(gen_ruleset(DST, 1, {24: 1.0}, seed=1)) == 1

    def test_deterministic(self):
        """Test the same seed gives the same rules."""
        a = gen_ruleset(DST, 100, {16: 1, 24: 1}, seed=4)
        b = gen_ruleset(DST, 100, {16: 1, 24: 1}, seed=4)
        assert a == b
        assert a != gen_ruleset(DST, 100, {16: 1, 24: 1}, seed=5)

    def test_histogram_honored(self):
        """Test a 50/50 histogram over 1000 rules."""
        rules = gen_ruleset(DST, 1000, {16: 0.5, 24: 0.5}, seed=2)
        lengths = Counter(r.matches[0].length for r in rules)
        assert abs(lengths[16] - 500) <= 40
        assert abs(lengths[24] - 500) <= 40

    def test_unique_rules_and_priorities(self):
        """Test rules and priorities are unique."""
        rules = gen_ruleset(DST, 500, {8: 0.2, 24: 0.8}, seed=3)
        assert len({r.matches for r in rules}) == 500
        assert sorted(r.priority for r in rules) == list(range(500))
        assert all(1 <= r.action <= 64 for r in rules)

    def test_infeasible_uniqueness(self):
        """Test more /8 rules than /8 prefixes raises."""
        with pytest.raises(RuleError):
            gen_ruleset(DST, 1000, {8: 0.5, 16: 0.5}, seed=1)

    def test_multi_field(self):
        """Test leading fields are exact and the last is a prefix."""
        fields = [FieldSpec("proto", 8), FieldSpec("dst", 32)]
        rules = gen_ruleset(fields, 20, {24: 1.0}, seed=9)
        assert all(isinstance(r.matches[1], Prefix) for r in rules)
        assert all(r.matches[0].value < 256 for r in rules)

    def test_length_outside_field(self):
        """Test a histogram length wider than the field raises."""
        with pytest.raises(RuleError):
            gen_ruleset(DST, 10, {40: 1.0}, seed=1)


class TestBindRuleKeys:
    """Tests for bind_rule_keys."""

    def test_keys_match_their_rules(self):
        """Test every flow key matches the rule it is bound to."""
        rules = gen_ruleset(DST, 50, {16: 1, 24: 1}, seed=1)
        idx, keys = bind_rule_keys(rules, DST, 200, 1.0, seed=7)
        for i, key in zip(idx, keys):
            assert match_rule(rules[int(i)], split_key(key.to_int(), DST), DST)

    def test_popularity_skew(self):
        """Test Zipf binding concentrates flows on few rules."""
        rules = gen_ruleset(DST, 100, {24: 1.0}, seed=1)
        idx, _ = bind_rule_keys(rules, DST, 5000, 1.0, seed=2)
        top = Counter(idx.tolist()).most_common(1)[0][1]
        assert top > 5000 / 100 * 5


class TestFlowSizeDistribution:
    """Tests for FlowSizeDistribution."""

    def test_parse_cdf(self):
        """Test a size,cum_prob file with a header."""
        dist = FlowSizeDistribution.parse("size,cum_prob\n1,0.5\n10,0.9\n100,1.0\n")
        assert dist.sizes.tolist() == [1, 10, 100]
        assert dist.mean() == pytest.approx(0.5 + 0.4 * 10 + 0.1 * 100)

    @pytest.mark.parametrize(
        ("sizes", "cdf"),
        [([1, 2], [0.5, 0.9]), ([2, 1], [0.5, 1.0]), ([1, 2], [0.6, 0.4]), ([], [])],
    )
    def test_invalid_cdf(self, sizes, cdf):
        """Test malformed CDFs are rejected."""
        with pytest.raises(ValueError):
            FlowSizeDistribution(sizes, cdf)

    def test_sample_within_support(self):
        """Test samples come from the listed sizes."""
        dist = FlowSizeDistribution([1, 10, 100], [0.5, 0.9, 1.0])
        samples = dist.sample(np.random.default_rng(0), 1000)
        assert set(samples.tolist()) <= {1, 10, 100}

    @pytest.mark.parametrize("kind", ["zipf", "pareto", "uniform"])
    def test_builtin(self, kind):
        """Test built-in distributions end at one."""
        dist = make_distribution(kind, max_size=1000)
        assert dist.cdf[-1] == 1.0
        assert dist.sizes[0] == 1

    def test_unknown_kind(self):
        """Test an unknown distribution name raises."""
        with pytest.raises(ValueError):
            make_distribution("lognormal")


ONE_PACKET = FlowSizeDistribution([1], [1.0])


class TestGenTrace:
    """Tests for gen_trace."""

    def test_no_flows(self):
        """Test zero flows give an empty trace."""
        trace = gen_trace(ONE_PACKET, 0, 1e6, 10 * MS, seed=1)
        assert len(trace) == 0

    def test_single_flow_interarrival(self):
        """Test one flow at 10^6 pps has a 1 us mean interarrival."""
        for seed in range(20):
            trace = gen_trace(ONE_PACKET, 1, 1e6, 10 * MS, seed=seed, uniform_starts=False)
            gaps = np.diff(trace.times_ns)
            assert gaps.mean() == pytest.approx(1000.0, rel=0.05)

    def test_aggregate_rate(self):
        """Test 10^4 flows hit 10 Mpps within 2%."""
        dist = make_distribution("pareto", 1.2, 10_000)
        trace = gen_trace(dist, 10_000, 10e6, 100 * MS, seed=3)
        assert trace.rate_pps() == pytest.approx(10e6, rel=0.02)

    def test_sorted_with_constant_keys(self):
        """Test arrivals are time ordered and each flow keeps one key."""
        trace = gen_trace(make_distribution("zipf", 1.2, 1000), 200, 1e6, MS, seed=5)
        assert np.all(np.diff(trace.times_ns) >= 0)
        assert set(trace.flow_ids.tolist()) <= set(trace.keys)
        assert all(t < MS for t in trace.times_ns.tolist())

    def test_rule_bound_keys(self):
        """Test flows bound to rules carry matching keys."""
        rules = gen_ruleset(DST, 20, {24: 1.0}, seed=1)
        trace = gen_trace(ONE_PACKET, 50, 1e6, MS, seed=2, rules=rules, fields=DST)
        for flow in trace.flows:
            assert match_rule(rules[flow.rule_index], split_key(flow.key.to_int(), DST), DST)

    def test_rate_proportional_to_size(self):
        """Test every flow's rate over its size is one shared constant."""
        trace = gen_trace(make_distribution("uniform", max_size=100), 50, 1e6, MS, seed=8)
        ratios = [f.rate_pps / f.size for f in trace.flows]
        assert max(ratios) == pytest.approx(min(ratios), rel=1e-9)

    def test_same_seed_same_file(self):
        """Test identical seeds give byte-identical trace files."""
        dist = make_distribution("zipf", 1.2, 1000)
        a = format_trace(gen_trace(dist, 100, 1e6, MS, seed=11))
        b = format_trace(gen_trace(dist, 100, 1e6, MS, seed=11))
        assert a == b

    def test_step_profile(self):
        """Test a step from low to high rate triples the second half."""
        profile = step_profile(1e6, 3e6, 20 * MS)
        assert profile == [(10 * MS, 1e6), (10 * MS, 3e6)]
        trace = gen_trace(ONE_PACKET, 1000, 0, 20 * MS, seed=4, uniform_starts=False, profile=profile)
        first = int(np.sum(trace.times_ns < 10 * MS))
        second = len(trace) - first
        assert second / first == pytest.approx(3.0, rel=0.05)

    def test_ramp_profile(self):
        """Test ramp segments cover the run with rising rates."""
        profile = ramp_profile(1e6, 2e6, 10 * MS + 3, steps=5)
        assert sum(d for d, _ in profile) == 10 * MS + 3
        rates = [r for _, r in profile]
        assert rates[0] == 1e6 and rates[-1] == 2e6
        assert rates == sorted(rates)


class TestTraceFiles:
    """Tests for the trace CSV format."""

    def test_write_and_load(self, tmp_path):
        """Test a written trace loads back."""
        trace = gen_trace(ONE_PACKET, 20, 1e6, MS, seed=1)
        path = tmp_path / "out" / "trace.csv"
        write_trace(trace, path)
        loaded = load_trace(path, trace.duration_ns)
        assert loaded.times_ns.tolist() == trace.times_ns.tolist()
        assert loaded.flow_ids.tolist() == trace.flow_ids.tolist()
        assert path.read_text().splitlines()[0] == "time_ns,flow_id,vmt_entry_key_hex"

    def test_backwards_time(self):
        """Test decreasing timestamps are rejected."""
        with pytest.raises(ValueError, match="backwards"):
            parse_trace("time_ns,flow_id,vmt_entry_key_hex\n10,0,0a\n5,1,0b\n")

    def test_flow_changes_key(self):
        """Test a flow switching keys is rejected."""
        with pytest.raises(ValueError, match="changes key"):
            parse_trace("1,0,0a\n2,0,0b\n")

    def test_wrong_columns(self):
        """Test rows need three columns."""
        with pytest.raises(ValueError):
            parse_trace("1,0\n")

    def test_default_duration(self):
        """Test the duration defaults to just past the last arrival."""
        trace = parse_trace("1,0,0a\n7,1,0b\n")
        assert trace.duration_ns == 8
        assert trace.keys[1] == Key(b"\x0b")


def flow_phv(flow_id: int, node=SOURCE) -> Phv:
    return Phv(flow_id, flow_id, {}, 0, current_node=node, path_seed=hash32(f"path:{flow_id}"))


class TestRoutePhv:
    """Tests for route_phv."""

    def test_one_hot(self):
        """Test a one-hot row always picks its successor."""
        cfg = chain_cfg([0, 1])
        assert all(route_phv(flow_phv(f, 0), cfg) == 1 for f in range(100))

    def test_residual_only_goes_to_sink(self):
        """Test a node without out-edges routes to t."""
        cfg = chain_cfg([0])
        assert route_phv(flow_phv(1, 0), cfg) == SINK

    def test_even_split(self):
        """Test a 0.5/0.5 row splits 10^4 flows within 3%."""
        cfg = CfgGraph.from_matrix({SOURCE: {0: 1.0}, 0: {1: 0.5, 2: 0.5}})
        counts = Counter(route_phv(flow_phv(f, 0), cfg) for f in range(10_000))
        assert abs(counts[1] / 10_000 - 0.5) < 0.03
        assert abs(counts[2] / 10_000 - 0.5) < 0.03

    def test_flow_path_is_stable(self):
        """Test packets of one flow take the same branch."""
        cfg = CfgGraph.from_matrix({SOURCE: {0: 1.0}, 0: {1: 0.5, 2: 0.5}})
        first = route_phv(flow_phv(42, 0), cfg)
        assert all(route_phv(flow_phv(42, 0), cfg) == first for _ in range(10))

    def test_per_packet_draw(self):
        """Test an explicit rng draws independently per packet."""
        cfg = CfgGraph.from_matrix({SOURCE: {0: 1.0}, 0: {1: 0.5, 2: 0.5}})
        rng = SeededRng(1)
        picks = {route_phv(flow_phv(42, 0), cfg, rng) for _ in range(100)}
        assert picks == {1, 2}
