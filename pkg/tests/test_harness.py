"""Experiment harness: grids, reproducibility, and report emission."""

import numpy as np
import pytest
from scipy.stats import binomtest

from credmark.attacks import AttackSpec
from credmark.config import DecodingSpec
from credmark.harness import (ExperimentGrid, MetricRow, emit_report,
                              run_robustness_table, run_success_grid,
                              rows_to_csv)
from credmark.providers import SyntheticProvider


@pytest.fixture(scope="module")
def provider():
    return SyntheticProvider(vocab_size=256, gen_seed=4)


@pytest.fixture(scope="module")
def small_grid():
    return ExperimentGrid(bits_values=(4, 6), delta_values=(1.5,), length=60,
                          trials=12, decoding=DecodingSpec(), rng_seed=11)


class TestSuccessGrid:
    def test_row_count_matches_cells(self, small_grid, provider):
        rows = run_success_grid(small_grid, provider=provider)
        assert len(rows) == 2

    def test_watermarked_cells_succeed(self, small_grid, provider):
        rows = run_success_grid(small_grid, provider=provider)
        for row in rows:
            assert row.success_rate >= 0.9

    def test_delta_zero_is_chance_level(self, provider):
        grid = ExperimentGrid(bits_values=(4,), delta_values=(0.0,), length=40,
                              trials=60, rng_seed=5)
        row = run_success_grid(grid, provider=provider)[0]
        # exact-match probability under no signal is 2^-4
        test = binomtest(int(round(row.success_rate * grid.trials)), grid.trials, 1 / 16)
        assert test.pvalue >= 0.01

    def test_reproducible(self, small_grid, provider):
        a = run_success_grid(small_grid, provider=provider)
        b = run_success_grid(small_grid, provider=provider)
        assert [r.success_rate for r in a] == [r.success_rate for r in b]


class TestRobustnessTable:
    def test_ratio_zero_matches_clean_exactly(self, provider):
        grid = ExperimentGrid(bits_values=(6,), delta_values=(1.5,), length=60,
                              trials=10, rng_seed=3,
                              attacks=(AttackSpec("none", 0.0),
                                       AttackSpec("deletion", 0.0)))
        rows = run_robustness_table(grid, provider=provider)
        assert rows[0].success_rate == rows[1].success_rate

    def test_deletion_degrades_gracefully(self, provider):
        grid = ExperimentGrid(bits_values=(6,), delta_values=(1.5,), length=80,
                              trials=12, rng_seed=7,
                              attacks=(AttackSpec("none", 0.0),
                                       AttackSpec("deletion", 0.2)))
        rows = run_robustness_table(grid, provider=provider)
        assert rows[1].success_rate >= 0.8

    def test_rate_cells_set_bpw(self, provider):
        grid = ExperimentGrid(delta_values=(1.5,), trials=4, rng_seed=1,
                              rate_cells=((6, 60), (6, 120)))
        rows = run_robustness_table(grid, provider=provider)
        assert rows[0].cell["bpw"] == pytest.approx(0.1)
        assert rows[1].cell["bpw"] == pytest.approx(0.05)


class TestReports:
    def test_metric_row_bounds(self):
        with pytest.raises(ValueError):
            MetricRow(cell={}, success_rate=1.2, mean_posterior=0.5,
                      tpr=0.0, fpr=0.0, runtime=1.0)

    def test_csv_byte_identical(self, tmp_path, small_grid, provider):
        rows = run_success_grid(small_grid, provider=provider)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        rows_to_csv(rows, p1)
        rows_to_csv(run_success_grid(small_grid, provider=provider), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_emit_report_writes_index_and_plots(self, tmp_path, provider):
        grid = ExperimentGrid(bits_values=(4, 6), delta_values=(0.5, 1.5),
                              length=40, trials=4, rng_seed=2)
        rows = run_success_grid(grid, provider=provider)
        written = emit_report({"success_grid": rows}, tmp_path)
        assert (tmp_path / "success_grid.csv").exists()
        index = (tmp_path / "index.html").read_text()
        assert "success_grid.csv" in index
        for png in written["png"]:
            assert (tmp_path / png).stat().st_size > 0
            assert png in index

    def test_emit_report_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report({}, tmp_path)


class TestTrendInvariants:
    def test_success_non_increasing_in_bits_at_fixed_length(self, provider):
        grid = ExperimentGrid(bits_values=(4, 8, 12), delta_values=(1.5,),
                              length=48, trials=60, rng_seed=21)
        rows = run_success_grid(grid, provider=provider)
        rates = [r.success_rate for r in rows]
        for a, b in zip(rates, rates[1:]):
            assert b <= a + 0.05, rates

    def test_success_non_decreasing_in_delta_at_fixed_bits(self, provider):
        grid = ExperimentGrid(bits_values=(8,), delta_values=(0.0, 0.75, 1.5, 3.0),
                              length=60, trials=60, rng_seed=22)
        rows = run_success_grid(grid, provider=provider)
        rates = [r.success_rate for r in rows]
        for a, b in zip(rates, rates[1:]):
            assert b >= a - 0.05, rates
