"""
Tests for weights, norming constants and Bernstein evaluation.

Run with: pytest tests/ -v
"""

import json
import math

import numpy as np
import pytest

from toric_bernstein import bernstein
from toric_bernstein.bernstein import (
    BernsteinEvaluator,
    NormingTable,
    build_norming_table,
    classical_bernstein,
    norming_closed_form_simplex,
    norming_constant,
    norming_constants,
    weight_exponent,
)
from toric_bernstein.exceptions import ConfigError, CrossCheckFailure, NotSimplex, PolytopeError
from toric_bernstein.expr import parse
from toric_bernstein.metric import ToricMetric
from toric_bernstein.polytope import Facet, grid_points, lattice_points, unit_cube, validate_delzant


@pytest.fixture(scope="module")
def evaluators():
    """Evaluators memoized per (metric, N) for the whole module."""
    built = {}

    def get(metric, N, **options):
        key = (id(metric), N, tuple(sorted(options.items())))
        if key not in built:
            built[key] = BernsteinEvaluator.build(metric, N, **options)
        return built[key]

    return get


class TestWeightExponent:
    """Tests for E(alpha, x)."""

    def test_interval_midpoint(self, interval_metric):
        assert weight_exponent(interval_metric, 2, (1,), (0.5,)) == pytest.approx(math.log(0.25))

    def test_interval_four(self, interval_metric):
        assert weight_exponent(interval_metric, 4, (2,), (0.5,)) == pytest.approx(-2.772589, abs=1e-6)

    def test_simplex_centre(self, simplex_metric):
        assert weight_exponent(simplex_metric, 1, (0, 0), (1 / 3, 1 / 3)) == pytest.approx(math.log(1 / 3))

    def test_boundary_values(self, interval_metric):
        """Test that weights vanish exactly off the facet at the boundary."""
        assert weight_exponent(interval_metric, 3, (0,), (0.0,)) == 0.0
        assert weight_exponent(interval_metric, 3, (1,), (0.0,)) == -np.inf

    def test_interior_identity(self, perturbed_square_metric):
        """Test E = N (u(x) + <alpha/N - x, grad u(x)>) away from the boundary."""
        N = 5
        x = np.array([0.3, 0.55])
        metric = perturbed_square_metric
        for alpha in lattice_points(metric.polytope, N):
            expected = N * (metric.u(x) + np.dot(np.array(alpha) / N - x, metric.grad_u(x)))
            assert weight_exponent(metric, N, alpha, x) == pytest.approx(expected, abs=1e-9)

    def test_outside(self, interval_metric):
        with pytest.raises(PolytopeError):
            weight_exponent(interval_metric, 2, (1,), (1.2,))


class TestNormingConstants:
    """Tests for log Q(alpha) by closed form and by quadrature."""

    def test_closed_form_examples(self):
        assert norming_closed_form_simplex(2, (1,), 1) == pytest.approx(math.log(1 / 6))
        assert norming_closed_form_simplex(2, (0,), 1) == pytest.approx(math.log(1 / 3))
        assert norming_closed_form_simplex(2, (1, 1), 2) == pytest.approx(math.log(1 / 24))
        assert norming_closed_form_simplex(3, (3, 0), 2) == pytest.approx(math.log(1 / 20))
        assert norming_closed_form_simplex(0, (0,), 1) == 0.0

    def test_quadrature_examples(self, interval_metric, simplex_metric):
        assert norming_constant(interval_metric, 2, (1,)) == pytest.approx(math.log(1 / 6), abs=1e-10)
        assert norming_constant(simplex_metric, 2, (1, 1)) == pytest.approx(math.log(1 / 24), abs=1e-8)

    def test_not_simplex(self):
        with pytest.raises(NotSimplex):
            norming_closed_form_simplex(2, (1, 1), 2, polytope=unit_cube(2))

    def test_closed_form_needs_simplex(self, square_metric):
        with pytest.raises(NotSimplex):
            build_norming_table(square_metric, 2, method="closed_form")

    def test_unknown_method(self, interval_metric):
        with pytest.raises(ValueError):
            build_norming_table(interval_metric, 2, method="guess")

    @pytest.mark.parametrize("N", [1, 4, 13, 32])
    def test_interval_quadrature_matches_closed_form(self, interval_metric, N):
        """Test every alpha of NP to relative 1e-8 on the interval."""
        lattice = lattice_points(interval_metric.polytope, N)
        quad = norming_constants(interval_metric, N, lattice.points)
        closed = bernstein.norming_closed_form_batch(N, lattice.points, 1)
        np.testing.assert_allclose(quad, closed, rtol=1e-8)

    @pytest.mark.parametrize("N", [2, 7, 16])
    def test_simplex_quadrature_matches_closed_form(self, simplex_metric, N):
        lattice = lattice_points(simplex_metric.polytope, N)
        quad = norming_constants(simplex_metric, N, lattice.points)
        closed = bernstein.norming_closed_form_batch(N, lattice.points, 2)
        np.testing.assert_allclose(quad, closed, rtol=1e-6)

    def test_auto_method(self, simplex_metric, perturbed_interval_metric):
        assert set(build_norming_table(simplex_metric, 3).methods) == {"cf"}
        assert set(build_norming_table(perturbed_interval_metric, 3).methods) == {"quad"}

    def test_cross_check_failure(self, simplex_metric, monkeypatch):
        """Test that a disagreeing quadrature stops the table build."""
        monkeypatch.setattr(bernstein, "norming_constants",
                            lambda metric, N, alphas, spec=None: np.zeros(len(alphas)))
        with pytest.raises(CrossCheckFailure):
            build_norming_table(simplex_metric, 4)


class TestNormingTable:
    """Tests for the norming table container and its cache file."""

    def test_entry_lookup(self, interval_metric):
        table = build_norming_table(interval_metric, 2)
        assert table.entry((1,)) == pytest.approx(math.log(1 / 6))
        with pytest.raises(PolytopeError):
            table.entry((5,))

    def test_json_cache(self, perturbed_interval_metric, tmp_path):
        """Test that a written table is read back entry for entry."""
        table = build_norming_table(perturbed_interval_metric, 6)
        path = tmp_path / "norming.json"
        table.to_json(path)
        loaded = NormingTable.from_json(path, perturbed_interval_metric, 6)
        np.testing.assert_array_equal(loaded.log_q, table.log_q)
        assert loaded.methods == table.methods
        assert loaded.metric == perturbed_interval_metric.to_dict()

    def test_incomplete_cache(self, interval_metric, tmp_path):
        path = tmp_path / "norming.json"
        path.write_text(json.dumps({
            "N": 2,
            "entries": [{"alpha": [0], "logQ": -1.0, "method": "cf"}],
            "metric": interval_metric.to_dict(),
        }))
        with pytest.raises(ValueError, match="missing lattice points"):
            NormingTable.from_json(path, interval_metric)

    def test_cache_for_other_dilation(self, interval_metric, tmp_path):
        path = tmp_path / "norming.json"
        build_norming_table(interval_metric, 2).to_json(path)
        with pytest.raises(ConfigError, match="N=2"):
            NormingTable.from_json(path, interval_metric, 4)

    def test_cache_for_other_metric(self, interval_metric, perturbed_interval_metric, tmp_path):
        """Test that a canonical table is refused for a perturbed metric and vice versa."""
        path = tmp_path / "norming.json"
        build_norming_table(interval_metric, 3).to_json(path)
        with pytest.raises(ConfigError, match="perturbation"):
            NormingTable.from_json(path, perturbed_interval_metric, 3)
        build_norming_table(perturbed_interval_metric, 3).to_json(path)
        with pytest.raises(ConfigError, match="perturbation"):
            NormingTable.from_json(path, interval_metric, 3)

    def test_cache_for_other_polytope(self, interval_metric, tmp_path):
        path = tmp_path / "norming.json"
        build_norming_table(interval_metric, 2).to_json(path)
        segment = validate_delzant([Facet((1,), 0), Facet((-1,), -2)], dim=1)
        with pytest.raises(ConfigError, match="polytope"):
            NormingTable.from_json(path, ToricMetric(segment), 2)

    def test_cache_without_metric(self, interval_metric, tmp_path):
        path = tmp_path / "norming.json"
        path.write_text('{"N": 1, "entries": [{"alpha": [0], "logQ": -0.69, "method": "cf"},'
                        ' {"alpha": [1], "logQ": -0.69, "method": "cf"}]}')
        with pytest.raises(ConfigError):
            NormingTable.from_json(path, interval_metric, 1)

    def test_frame_columns(self, simplex_metric):
        frame = build_norming_table(simplex_metric, 2).to_frame()
        assert list(frame.columns) == ["alpha1", "alpha2", "logQ", "method"]
        assert len(frame) == 6

    def test_mismatched_lengths(self, interval_metric):
        lattice = lattice_points(interval_metric.polytope, 2)
        with pytest.raises(ValueError):
            NormingTable(N=2, lattice=lattice, log_q=np.zeros(2), methods=("cf",) * 2)


class TestDenominator:
    """Tests for D(x)."""

    @pytest.mark.parametrize("m,N", [(1, 1), (1, 7), (1, 16), (2, 2), (2, 9), (2, 16)])
    def test_simplex_oracle(self, interval_metric, simplex_metric, evaluators, m, N):
        """Test D = (N + m)! / N! on the canonical simplex."""
        metric = interval_metric if m == 1 else simplex_metric
        evaluator = evaluators(metric, N, cross_check=0)
        points = grid_points(metric.polytope, 6 if m == 2 else 10, include_ends=False)[:10]
        expected = math.factorial(N + m) / math.factorial(N)
        np.testing.assert_allclose(evaluator.denominator(points), expected, rtol=1e-9)

    def test_examples(self, interval_metric, simplex_metric, evaluators):
        assert evaluators(interval_metric, 2).denominator((0.3,)) == pytest.approx(3.0)
        assert evaluators(simplex_metric, 2).denominator((1 / 3, 1 / 3)) == pytest.approx(12.0)

    def test_at_vertex(self, interval_metric, evaluators):
        assert evaluators(interval_metric, 5).denominator((0.0,)) == pytest.approx(6.0)

    def test_integrated_count(self, perturbed_interval_metric, evaluators):
        """Test ∫_P D dx = |NP cap Z^m| for a perturbed metric."""
        from toric_bernstein.quad import integrate_polytope

        evaluator = evaluators(perturbed_interval_metric, 6)
        assert integrate_polytope(perturbed_interval_metric.polytope, evaluator.denominator) == \
            pytest.approx(7.0, rel=1e-8)


class TestEvaluate:
    """Tests for B_N f."""

    def test_second_moment_example(self, interval_metric, evaluators):
        assert evaluators(interval_metric, 2).evaluate(parse("x1^2", 1), (0.5,)) == pytest.approx(0.375)

    def test_second_moment_law(self, interval_metric, evaluators):
        """Test B_N(x^2) = x^2 + x(1 - x)/N for N = 1..64."""
        f = parse("x1^2", 1)
        x = np.linspace(0.0, 1.0, 20)
        for N in range(1, 65):
            values = evaluators(interval_metric, N, cross_check=0).evaluate(f, x[:, None])
            np.testing.assert_allclose(values, x ** 2 + x * (1 - x) / N, rtol=0, atol=1e-12)

    def test_reproduces_affine(self, simplex_metric, evaluators):
        evaluator = evaluators(simplex_metric, 4)
        assert evaluator.evaluate(parse("x1", 2), (0.2, 0.5)) == pytest.approx(0.2, abs=1e-14)
        assert evaluator.evaluate(parse("3", 2), (0.2, 0.5)) == pytest.approx(3.0, abs=1e-14)

    def test_classical_oracle(self, interval_metric, simplex_metric, evaluators):
        """Test the toric pipeline against the multinomial formula."""
        rng = np.random.default_rng(7)
        functions = {1: ["sin(pi*x1)", "exp(x1)", "x1^3 - x1"],
                     2: ["sin(pi*x1)*x2", "exp(x1 - x2)", "x1*x2 + 1"]}
        for _ in range(40):
            m = int(rng.integers(1, 3))
            N = int(rng.choice([1, 3, 8, 20, 50]))
            metric = interval_metric if m == 1 else simplex_metric
            f = parse(str(rng.choice(functions[m])), m)
            x = rng.dirichlet(np.ones(m + 1))[:m]
            toric = evaluators(metric, N, cross_check=0).evaluate(f, x)
            classical = classical_bernstein(f, x, N)
            assert toric == pytest.approx(classical, rel=1e-10, abs=1e-13)

    def test_exchange_symmetry(self, simplex_metric, evaluators):
        """Test that swapping coordinates commutes with B_N on Sigma_2."""
        f = parse("x1*x2^2 + x2*x1^2", 2)
        evaluator = evaluators(simplex_metric, 6)
        assert evaluator.evaluate(f, (0.15, 0.6)) == pytest.approx(evaluator.evaluate(f, (0.6, 0.15)), abs=1e-13)

    def test_numerator(self, interval_metric, evaluators):
        evaluator = evaluators(interval_metric, 2)
        assert evaluator.numerator(parse("1", 1), (0.5,)) == pytest.approx(3.0)
        assert evaluator.numerator(parse("x1^2", 1), (0.5,)) == pytest.approx(1.125)

    def test_log_numerator(self, interval_metric, evaluators):
        evaluator = evaluators(interval_metric, 3)
        f = parse("x1 - 0.9", 1)
        log_abs, sign = evaluator.log_numerator(f, (0.4,))
        assert sign == -1.0
        assert math.exp(log_abs) == pytest.approx(abs(evaluator.numerator(f, (0.4,))))

    def test_dimension_normalized(self, interval_metric, perturbed_interval_metric, evaluators):
        """Test that the lattice-count normalization keeps constants for Fubini-Study only."""
        one = parse("1", 1)
        assert evaluators(interval_metric, 4).evaluate_dimension_normalized(one, (0.3,)) == pytest.approx(1.0)
        assert evaluators(interval_metric, 4).evaluate_dimension_normalized(parse("x1", 1), (0.5,)) == \
            pytest.approx(0.5)
        perturbed = evaluators(perturbed_interval_metric, 4).evaluate_dimension_normalized(one, (0.3,))
        assert perturbed != pytest.approx(1.0, abs=1e-8)


class TestMeasure:
    """Tests for the empirical measure."""

    def test_interval_probabilities(self, interval_metric, evaluators):
        measure = evaluators(interval_metric, 2).measure((0.5,))
        np.testing.assert_allclose(measure.probabilities, [0.25, 0.5, 0.25])

    def test_vertex_is_point_mass(self, interval_metric, evaluators):
        measure = evaluators(interval_metric, 2).measure((0.0,))
        np.testing.assert_allclose(measure.probabilities, [1.0, 0.0, 0.0])

    def test_simplex_uniform(self, simplex_metric, evaluators):
        measure = evaluators(simplex_metric, 1).measure((1 / 3, 1 / 3))
        np.testing.assert_allclose(measure.probabilities, [1 / 3] * 3)

    def test_classical_moments(self, interval_metric, evaluators):
        measure = evaluators(interval_metric, 10).measure((0.3,))
        assert measure.moment((1,)) == pytest.approx(0.0, abs=1e-14)
        assert measure.moment((2,)) == pytest.approx(0.3 * 0.7 / 10)
        np.testing.assert_allclose(measure.mean(), [0.3])

    def test_random_measures(self, interval_metric, perturbed_interval_metric, simplex_metric,
                             square_metric, perturbed_square_metric, evaluators):
        """Test nonnegativity, normalization and the min/max bounds."""
        rng = np.random.default_rng(11)
        metrics = [interval_metric, perturbed_interval_metric, simplex_metric,
                   square_metric, perturbed_square_metric]
        functions = {1: parse("sin(3*x1) + x1^2", 1), 2: parse("cos(2*x1)*x2 - x1", 2)}
        for _ in range(50):
            metric = metrics[int(rng.integers(len(metrics)))]
            N = int(rng.integers(2, 9))
            evaluator = evaluators(metric, N)
            x = rng.dirichlet(np.ones(3))[:2] if metric is simplex_metric else rng.uniform(0, 1, metric.dim)
            measure = evaluator.measure(x)
            assert np.all(measure.probabilities >= 0)
            assert abs(measure.probabilities.sum() - 1.0) <= 1e-12
            f = functions[metric.dim]
            node_values = f.evaluate(evaluator.nodes)
            value = evaluator.evaluate(f, x)
            assert node_values.min() - 1e-12 <= value <= node_values.max() + 1e-12

    def test_variance_link(self, perturbed_interval_metric, evaluators):
        """Test N times the second moment against H(x) at N = 256."""
        x = 0.4
        measure = evaluators(perturbed_interval_metric, 256).measure((x,))
        H = perturbed_interval_metric.inverse_hessian((x,))[0, 0]
        assert 256 * measure.moment((2,)) == pytest.approx(H, rel=0.05)


class TestTruncation:
    """Tests for localized evaluation."""

    @pytest.mark.parametrize("N", [100, 400])
    def test_interval_window(self, interval_metric, evaluators, N):
        f = parse("sin(x1)", 1)
        evaluator = evaluators(interval_metric, N, cross_check=0)
        x = (0.5,)
        full = evaluator.evaluate(f, x)
        assert abs(evaluator.evaluate_truncated(f, x, c=10) - full) <= 1e-10
        if N == 400:
            assert evaluator.truncation_mask(x, 10).mean() <= 0.4

    @pytest.mark.parametrize("N", [100, 400])
    def test_simplex_window(self, simplex_metric, evaluators, N):
        f = parse("sin(x1) + cos(x2)", 2)
        evaluator = evaluators(simplex_metric, N, cross_check=0)
        x = (1 / 3, 1 / 3)
        full = evaluator.evaluate(f, x)
        # ‖f‖∞ <= 2
        assert abs(evaluator.evaluate_truncated(f, x, c=10) - full) <= 2e-10
        if N == 400:
            assert evaluator.truncation_mask(x, 10).mean() <= 0.4

    def test_wide_window_is_exact(self, interval_metric, evaluators):
        """Test that a window covering every point returns the full sum bitwise."""
        f = parse("exp(x1)", 1)
        evaluator = evaluators(interval_metric, 4)
        assert evaluator.evaluate_truncated(f, (0.3,), c=1e6) == evaluator.evaluate(f, (0.3,))

    def test_uniform_mode(self, interval_metric, evaluators):
        evaluator = evaluators(interval_metric, 100, cross_check=0)
        mask = evaluator.truncation_mask((0.5,), 1.0, mode="uniform")
        radius = math.sqrt(math.log(100) / 100)
        assert np.all(np.abs(evaluator.nodes[mask, 0] - 0.5) <= radius + 1e-12)

    def test_facet_point(self, simplex_metric, evaluators):
        """Test that the window on an edge still covers the spread along the edge."""
        f = parse("x2^2", 2)
        evaluator = evaluators(simplex_metric, 100, cross_check=0)
        x = (0.0, 0.5)
        full = evaluator.evaluate(f, x)
        assert full == pytest.approx(0.25 + 0.25 / 100, rel=1e-12)
        assert abs(evaluator.evaluate_truncated(f, x, c=10) - full) <= 1e-10
        mask = evaluator.truncation_mask(x, 10)
        assert mask.mean() <= 0.4
        assert np.all(evaluator.nodes[mask, 0] <= 2 / 100 + 1e-12)

    def test_vertex(self, interval_metric, evaluators):
        f = parse("exp(x1)", 1)
        evaluator = evaluators(interval_metric, 100, cross_check=0)
        assert evaluator.evaluate_truncated(f, (0.0,)) == pytest.approx(1.0)

    def test_bad_multiplier(self, interval_metric, evaluators):
        with pytest.raises(ValueError):
            evaluators(interval_metric, 4).truncation_mask((0.5,), c=0.0)


class TestClassicalBernstein:
    """Tests for the multinomial reference."""

    def test_interval(self):
        assert classical_bernstein(parse("x1^2", 1), (0.5,), 2) == pytest.approx(0.375)

    def test_simplex_linear(self):
        assert classical_bernstein(parse("x2", 2), (0.25, 0.5), 7) == pytest.approx(0.5)
