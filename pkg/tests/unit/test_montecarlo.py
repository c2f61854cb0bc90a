"""Unit tests for the Monte Carlo oracles and the misspecification study."""

import math

import numpy as np
import pytest

from tubeband.config import settings
from tubeband.core.metrics import replications_recorded
from tubeband.models.specs import BasisSpec, SimulationConfig, TrueModel, TubeFormulaParams
from tubeband.services.montecarlo import (
    bias_delta,
    confidence_coefficient_curve,
    coverage_bias_bound,
    coverage_simulation,
    partition_sizes,
    run_partitioned,
    simulate_max_process,
    simulate_tube_volume,
    study_critical_value,
    tail_curve,
    true_curves,
    width_table,
)
from tubeband.services.tube import tube_tail_probability, tube_volume_fraction
from tubeband.utils.exceptions import DomainError


class TestPartitionedRng:
    """Results depend on (seed, partitions) only."""

    def test_partition_sizes(self):
        assert partition_sizes(10, 3) == [4, 3, 3]
        assert partition_sizes(2, 4) == [1, 1, 0, 0]

    def test_worker_count_does_not_matter(self, quarter_circle, monkeypatch):
        monkeypatch.setattr(settings, "threads", 1)
        single = simulate_max_process(quarter_circle, k=3, reps=3000, grid_n=51, seed=5, partitions=4)
        monkeypatch.setattr(settings, "threads", 4)
        many = simulate_max_process(quarter_circle, k=3, reps=3000, grid_n=51, seed=5, partitions=4)

        assert np.array_equal(single.maxima, many.maxima)
        assert np.array_equal(single.pointwise_mean, many.pointwise_mean)

    def test_seed_changes_draws(self, quarter_circle):
        first = simulate_max_process(quarter_circle, k=2, reps=200, grid_n=21, seed=1, partitions=2)
        second = simulate_max_process(quarter_circle, k=2, reps=200, grid_n=21, seed=2, partitions=2)
        assert not np.array_equal(first.maxima, second.maxima)

    def test_partition_order(self):
        def worker(rng, size):
            return rng.standard_normal(size)

        joined = run_partitioned("test", 7, 3, 3, worker)
        children = np.random.SeedSequence(3).spawn(3)
        expected = np.concatenate(
            [
                np.random.Generator(np.random.Philox(child)).standard_normal(size)
                for child, size in zip(children, partition_sizes(7, 3))
            ]
        )
        assert np.array_equal(joined, expected)

    def test_replications_must_be_positive(self):
        with pytest.raises(DomainError):
            run_partitioned("test", 0, 1, 1, lambda rng, size: np.zeros(size))

    def test_metrics_count_replications(self, quarter_circle):
        before = replications_recorded("max_process")
        simulate_max_process(quarter_circle, k=2, reps=123, grid_n=11, seed=0, partitions=3)
        assert replications_recorded("max_process") - before == 123


class TestMaxProcess:
    """Test the simulated maximum of the chi-square process."""

    def test_pointwise_mean(self, quad_curve):
        result = simulate_max_process(quad_curve, k=3, reps=20_000, grid_n=41, seed=9, partitions=4)
        assert np.allclose(result.pointwise_mean, 2.0, atol=0.1)

    def test_maxima_sorted(self, quad_curve):
        result = simulate_max_process(quad_curve, k=3, reps=500, grid_n=21, seed=1, partitions=2)
        assert np.all(np.diff(result.maxima) >= 0)
        assert result.maxima.size == 500

    def test_tail_matches_tube_formula(self, quarter_circle):
        result = simulate_max_process(
            quarter_circle, k=2, reps=20_000, grid_n=201, seed=17, partitions=4
        )
        params = TubeFormulaParams(k=2, gamma_length=math.pi / 2, euler_char=1)
        estimate, stderr = result.tail_probability(2.5)

        assert estimate == pytest.approx(tube_tail_probability(params, 2.5), abs=5 * stderr + 0.003)

    @pytest.mark.slow
    def test_tube_formula_is_conservative(self, quad_curve):
        result = simulate_max_process(
            quad_curve, k=3, reps=100_000, grid_n=201, seed=2024, partitions=8
        )
        params = TubeFormulaParams(k=3, gamma_length=math.pi / math.sqrt(6.0), euler_char=1)
        checked = 0
        for b in np.arange(1.8, 3.8, 0.05):
            tube = tube_tail_probability(params, float(b))
            if not 0.01 <= tube <= 0.2:
                continue
            estimate, stderr = result.tail_probability(float(b))
            checked += 1

            assert estimate <= tube + 3 * stderr
            assert abs(tube - estimate) <= 0.012
        assert checked >= 10

    def test_tail_probability_bounds(self, quad_curve):
        result = simulate_max_process(quad_curve, k=3, reps=400, grid_n=21, seed=2, partitions=2)
        assert result.tail_probability(0.0) == (1.0, 0.0)
        assert result.tail_probability(100.0) == (0.0, 0.0)

    def test_needs_two_groups(self, quad_curve):
        with pytest.raises(DomainError):
            simulate_max_process(quad_curve, k=1, reps=10)


class TestTubeVolume:
    def test_matches_formula_below_critical_radius(self, quad_curve):
        params = TubeFormulaParams(k=3, gamma_length=math.pi / math.sqrt(6.0), euler_char=1)
        (estimate,) = simulate_tube_volume(
            quad_curve, k=3, thetas=[0.3], points=20_000, seed=4, partitions=4, grid_n=401
        )

        expected = tube_volume_fraction(params, 3, 0.3)
        assert estimate.estimate == pytest.approx(expected, abs=5 * estimate.stderr + 0.003)

    @pytest.mark.slow
    def test_matches_formula_at_a_million_points(self, quad_curve):
        params = TubeFormulaParams(k=3, gamma_length=math.pi / math.sqrt(6.0), euler_char=1)
        estimates = simulate_tube_volume(
            quad_curve, k=3, thetas=[0.1, 0.2, 0.3], points=1_000_000, seed=6, partitions=8
        )

        for estimate in estimates:
            expected = tube_volume_fraction(params, 3, estimate.theta)
            assert abs(estimate.estimate - expected) <= 3 * estimate.stderr

class TestTrueCurves:
    """Test the misspecification study's true curves."""

    def test_in_basis_is_zero(self):
        assert np.array_equal(true_curves(TrueModel.IN_BASIS, 1.0, np.linspace(0, 1, 5)), np.zeros((3, 5)))

    def test_model2_values(self):
        g = true_curves(TrueModel.MODEL2, 3.0, np.array([0.0, 1.0]))
        assert np.allclose(g, [[0.0, 0.0], [0.0, 3.0], [0.0, 0.0]], atol=1e-15)

    def test_model3_normalization(self):
        g = true_curves(TrueModel.MODEL3, 1.0, np.array([0.0, 1.0]))
        assert g[1, 1] == pytest.approx(1.0)
        assert g[2, 0] == pytest.approx(1.0)
        assert g[2, 1] == pytest.approx(1.0)

    def test_model1_scales_with_amplitude(self):
        x = np.linspace(0.0, 1.0, 9)
        assert np.allclose(
            true_curves(TrueModel.MODEL1, 9.0, x), 9.0 * true_curves(TrueModel.MODEL1, 1.0, x)
        )


class TestBiasAndCoverage:
    """Test the bias quantities and simulated coverage."""

    def test_model1_is_in_basis_at_m5(self):
        config = SimulationConfig(true_model=TrueModel.MODEL1, amplitude=9.0)
        assert bias_delta(config) == pytest.approx(0.0, abs=1e-10)

    def test_zero_bias_gives_zero_bound(self):
        config = SimulationConfig()
        assert coverage_bias_bound(config, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_bound_grows_with_delta(self):
        config = SimulationConfig()
        assert coverage_bias_bound(config, 0.3) > coverage_bias_bound(config, 0.1) > 0

    def test_negative_delta(self):
        with pytest.raises(DomainError):
            coverage_bias_bound(SimulationConfig(), -0.1)

    def test_in_basis_coverage_is_nominal(self):
        config = SimulationConfig(
            true_model=TrueModel.IN_BASIS, replications=4000, partitions=4, grid_n=201, seed=8
        )
        result = coverage_simulation(config)

        assert 0.92 < result.estimate < 0.985
        assert result.b == pytest.approx(study_critical_value(config)[0])

    def test_coverage_falls_as_bias_grows(self):
        coverages = [
            coverage_simulation(
                SimulationConfig(
                    true_model=TrueModel.MODEL1,
                    amplitude=amplitude,
                    assumed_basis=BasisSpec.bspline(2, 3, 0.0, 1.0),
                    design="endpoint",
                    replications=4000,
                    partitions=4,
                    grid_n=201,
                    seed=12,
                )
            ).estimate
            for amplitude in (0.5, 2.0, 9.0)
        ]

        assert coverages[0] > coverages[1] > coverages[2]

    def test_coverage_is_reproducible(self):
        config = SimulationConfig(replications=600, partitions=3, grid_n=51, seed=3)
        assert coverage_simulation(config).estimate == coverage_simulation(config).estimate

    def test_too_many_basis_functions(self):
        config = SimulationConfig(assumed_basis=BasisSpec.bspline(2, 12, 0.0, 1.0))
        with pytest.raises(DomainError):
            bias_delta(config)


class TestFrames:
    def test_tail_curve_columns(self, quad_curve):
        result = simulate_max_process(quad_curve, k=3, reps=200, grid_n=21, seed=0, partitions=2)
        params = TubeFormulaParams(k=3, gamma_length=math.pi / math.sqrt(6.0), euler_char=1)
        frame = tail_curve(result, params, [2.0, 3.0])

        assert list(frame.columns) == ["b", "tube", "monte_carlo", "stderr"]
        assert len(frame) == 2

    def test_confidence_curve(self, quad_curve):
        result = simulate_max_process(quad_curve, k=3, reps=200, grid_n=21, seed=0, partitions=2)
        params = TubeFormulaParams(k=3, gamma_length=math.pi / math.sqrt(6.0), euler_char=1)
        frame = confidence_coefficient_curve(result, params, [0.9, 0.95])

        assert list(frame.columns) == ["nominal", "b", "actual", "stderr"]
        assert frame["b"].is_monotonic_increasing

    def test_width_table(self):
        frame = width_table(SimulationConfig(), [3, 4])

        assert list(frame.columns) == ["m", "b", "W"]
        assert frame["W"].is_monotonic_increasing
