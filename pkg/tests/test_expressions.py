import numpy as np
import pytest

from mfglab.expressions import ExpressionError, compile_spacetime, compile_spatial


def test_arithmetic_and_functions():
    fn = compile_spacetime("2 + 0.5*sin(3.141592653589793*x) - t/2", 1)
    x = np.array([0.0, 0.5])
    t = np.array([1.0, 1.0])
    got = fn(x, t)
    assert np.allclose(got, 2 + 0.5 * np.sin(np.pi * x) - 0.5)


def test_power_and_unary():
    fn = compile_spacetime("-x^2 + 2^3", 1)
    assert np.allclose(fn(np.array([3.0]), np.array([0.0])), [-9.0 + 8.0])


def test_x_alias_and_2d():
    fn = compile_spacetime("x1*x2 + exp(t)", 2)
    got = fn(np.array([2.0]), np.array([3.0]), np.array([0.0]))
    assert np.allclose(got, [7.0])
    with pytest.raises(ExpressionError, match="x2"):
        compile_spacetime("x2", 1)


def test_spatial_rejects_time():
    with pytest.raises(ExpressionError, match="spatial"):
        compile_spatial("1 + t", 1)
    fn = compile_spatial("1 + x/2", 1)
    assert np.allclose(fn(np.array([1.0])), [1.5])


def test_unknown_identifier():
    with pytest.raises(ExpressionError, match="unknown identifier"):
        compile_spacetime("y + 1", 1)


def test_syntax_errors():
    with pytest.raises(ExpressionError):
        compile_spacetime("1 +", 1)
    with pytest.raises(ExpressionError):
        compile_spacetime("sin 3", 1)
    with pytest.raises(ExpressionError):
        compile_spacetime("(1", 1)
