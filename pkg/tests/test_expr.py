"""
Tests for the expression parser and evaluator.

Run with: pytest tests/ -v
"""

import numpy as np
import pytest
import sympy

from toric_bernstein.exceptions import (
    DimensionMismatch,
    DomainError,
    ExprSyntaxError,
    UnknownIdentifier,
    VariableOutOfRange,
)
from toric_bernstein.expr import parse, parse_optional, zero


class TestParsing:
    """Tests for grammar and precedence."""

    def test_square(self):
        assert parse("x1^2", 1)(3.0) == 9.0

    def test_star_star_power(self):
        assert parse("x1**2", 1).tree == parse("x1^2", 1).tree

    def test_unary_minus_binds_looser(self):
        """Test that -x1^2 is -(x1^2)."""
        assert parse("-x1^2", 1)(2.0) == -4.0

    def test_right_associative_power(self):
        assert parse("2^3^2", 1)(0.0) == 512.0

    def test_negative_exponent(self):
        assert parse("x1^-2", 1)(2.0) == pytest.approx(0.25)

    def test_exact_decimals(self):
        """Test that decimal literals become exact rationals."""
        assert parse("0.1", 1).tree == sympy.Rational(1, 10)

    def test_functions_and_constants(self):
        f = parse("sin(pi*x1)*x2 + exp(0) + log(e)", 2)
        assert f((0.5, 3.0)) == pytest.approx(5.0)

    def test_round_trip(self):
        """Test that printed expressions parse back to the same tree."""
        for text in ["sin(pi*x1)*x2", "exp(x1 + x2)/3", "x1^-2 + e", "sqrt(1 + x1^2)", "tanh(x1)*cos(x2)"]:
            f = parse(text, 2)
            assert parse(str(f), 2).tree == f.tree

    def test_optional(self):
        assert parse_optional(None, 2).is_zero
        assert parse_optional("  ", 2).is_zero
        assert not parse_optional("x1", 2).is_zero


class TestErrors:
    """Tests for parse errors."""

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifier):
            parse("y + 1", 1)

    def test_variable_out_of_range(self):
        with pytest.raises(VariableOutOfRange):
            parse("x3", 2)

    def test_x0_out_of_range(self):
        with pytest.raises(VariableOutOfRange):
            parse("x0", 2)

    def test_trailing_operator_offset(self):
        """Test that the offset points at the end of input."""
        with pytest.raises(ExprSyntaxError) as info:
            parse("x1 +", 1)
        assert info.value.offset == 4

    def test_bad_character_offset(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse("x1 $ 2", 1)
        assert info.value.offset == 3

    def test_unclosed_call(self):
        with pytest.raises(ExprSyntaxError):
            parse("sin(x1", 1)

    def test_dangling_token(self):
        with pytest.raises(ExprSyntaxError):
            parse("x1 x1", 1)


class TestEvaluation:
    """Tests for vectorized evaluation and domain errors."""

    def test_batch(self):
        f = parse("x1*x2", 2)
        values = f.evaluate(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert values.tolist() == [2.0, 12.0]

    def test_constant_broadcasts(self):
        values = parse("2", 1).evaluate(np.zeros((5, 1)))
        assert values.shape == (5,)
        assert np.all(values == 2.0)

    def test_wrong_dimension(self):
        with pytest.raises(DimensionMismatch):
            parse("x1", 2).evaluate(np.zeros((3, 1)))

    def test_log_zero(self):
        with pytest.raises(DomainError):
            parse("log(x1)", 1)(0.0)

    def test_division_by_zero(self):
        with pytest.raises(DomainError):
            parse("1/x1", 1)(0.0)

    def test_sqrt_negative(self):
        with pytest.raises(DomainError):
            parse("sqrt(x1)", 1)(-1.0)

    def test_symbolic_division_by_zero(self):
        """Test that 1/0 folded by sympy is reported at evaluation."""
        with pytest.raises(DomainError):
            parse("1/0", 1)(0.5)

    def test_zero(self):
        assert zero(3).is_zero
        assert zero(3)((1.0, 2.0, 3.0)) == 0.0


class TestDerivatives:
    """Tests for symbolic partial derivatives."""

    def test_derivative(self):
        assert parse("x1^3", 1).derivative(0)(2.0) == pytest.approx(12.0)

    def test_mixed_partial(self):
        f = parse("x1*x2^2", 2)
        assert f.partial(0, 1)((1.0, 3.0)) == pytest.approx(6.0)
        assert f.partial(1, 0).tree == f.partial(0, 1).tree

    def test_hessian(self):
        H = parse("x1^2*x2", 2).hessian()
        values = [[h((1.0, 2.0)) for h in row] for row in H]
        assert values == [[4.0, 2.0], [2.0, 0.0]]

    def test_gradient_of_constant(self):
        assert all(g.is_zero for g in parse("5", 2).gradient())

    def test_second_derivative_of_fourth_power(self):
        assert parse("x1^4", 1).partial(0, 0)(1.0) == pytest.approx(12.0)

    def test_fourth_derivative(self):
        assert parse("x1^4", 1).partial(0, 0, 0, 0).tree == 24

    @pytest.mark.parametrize("text", [
        "sin(pi*x1)*x2",
        "exp(x1 - 2*x2)/(1 + x1^2)",
        "log(1 + x1*x2) + sqrt(2 + x2)",
        "x1^3*x2^2 - 4*x1*x2",
        "cos(x1*x2)^2",
    ])
    def test_matches_central_differences(self, text):
        """Test first and second partials against central differences at random points."""
        f = parse(text, 2)
        rng = np.random.default_rng(7)
        points = rng.uniform(0.1, 0.9, size=(10, 2))
        h = 1e-5
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            fd = (f.evaluate(points + step) - f.evaluate(points - step)) / (2 * h)
            np.testing.assert_allclose(f.derivative(j).evaluate(points), fd, rtol=1e-6, atol=1e-7)
            for k in range(2):
                df = f.derivative(k)
                fd2 = (df.evaluate(points + step) - df.evaluate(points - step)) / (2 * h)
                np.testing.assert_allclose(f.partial(k, j).evaluate(points), fd2, rtol=1e-6, atol=1e-6)

    def test_bad_index(self):
        with pytest.raises(VariableOutOfRange):
            parse("x1", 1).derivative(1)
