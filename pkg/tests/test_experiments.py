"""Tests for the experiment harness."""

from __future__ import annotations

import pytest

from vmtsim.config import config_from_dict
from vmtsim.engine.experiments import (
    Cell,
    derive,
    experiment_adaptive,
    experiment_stress,
    experiment_sweep,
    run_cells,
)


class TestDerive:
    """Tests for derive."""

    def test_update_applied(self, small_config):
        """Test the update lands on a copy."""
        derived = derive(small_config, lambda d: d.update({"pmu-count": 6}))
        assert derived.pmu_count == 6
        assert small_config.pmu_count == 4
        assert derived.vmts[0].rules.histogram == {24: 1.0}


class TestRunCells:
    """Tests for run_cells."""

    def test_progress_and_order(self, small_config):
        """Test results keep input order and progress counts up."""
        seen = []
        other = derive(small_config, lambda d: d.update({"seed": 8}))
        results = run_cells([Cell(small_config), Cell(other)], progress=lambda done, total: seen.append((done, total)))
        assert seen == [(1, 2), (2, 2)]
        assert len(results) == 2
        assert results[0].metrics.to_dict() != results[1].metrics.to_dict()

    def test_empty(self):
        """Test no cells give no results."""
        assert run_cells([]) == []


class TestSweep:
    """Tests for experiment_sweep."""

    def test_grid(self, small_config):
        """Test one row per cell and empty metrics for invalid cells."""
        rows = experiment_sweep(small_config, block_sizes=(64, 128), capacities=(128, 96))
        assert [(r["block_size"], r["vmt_capacity"]) for r in rows] == [(64, 128), (64, 96), (128, 128), (128, 96)]
        assert rows[1]["hit_rate"] is None
        assert rows[3]["mem_gbps"] is None
        for row in (rows[0], rows[2]):
            assert 0.0 <= row["hit_rate"] <= 1.0
            assert row["p95_cycles"] >= row["p50_cycles"]

    def test_empty_grid(self, small_config):
        """Test an empty grid produces no rows."""
        assert experiment_sweep(small_config, block_sizes=(), capacities=(128,)) == []


class TestStress:
    """Tests for experiment_stress."""

    def test_rows(self, small_config):
        """Test rows are grouped by PMU count then rate."""
        rows = experiment_stress(small_config, rates=[5e5, 1e6], pmu_counts=(1, 2))
        assert [(r["pmu_count"], r["input_rate_pps"]) for r in rows] == [(1, 5e5), (1, 1e6), (2, 5e5), (2, 1e6)]
        assert all(r["throughput_pps"] > 0 for r in rows)


@pytest.mark.slow
class TestAdaptive:
    """Tests for experiment_adaptive."""

    def test_static_against_adaptive(self, small_config_data):
        """Test both runs report per-window rows and a summary."""
        rules = {"count": 50, "histogram": {24: 1.0}}
        small_config_data["vmts"] = [{"id": 0, "pmus": 1, "rules": rules}, {"id": 1, "pmus": 1, "rules": rules}]
        small_config_data["optimizer"] = {"period-windows": 2}
        base = config_from_dict(small_config_data)
        rows, summary = experiment_adaptive(base, profile=[(50_000, 5e5), (50_000, 2e6)], calibrate=False)
        assert rows
        assert rows[0]["window"] == 0
        assert {"static_hit_rate", "adaptive_active_pmus", "offered_pps"} <= set(rows[0])
        assert summary["profile"] == [[50_000, 5e5], [50_000, 2e6]]
        assert sum(summary["static_allocation"].values()) <= base.pmu_count
        assert summary["reallocations"] >= 0
        assert "usl_fit" not in summary
