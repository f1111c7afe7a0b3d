import numpy as np
import pytest

from glnet import gradcheck as gc
from glnet import tensor as T


@pytest.mark.parametrize("name", sorted(gc.CASES))
def test_case_passes(name):
    result = gc.run_case(name, seed=1)
    assert result.passed, f"{name}: {result.max_rel_error:.2e}"
    assert result.n_checked > 0


def test_perturbed_gradients_are_caught():
    T.set_leaf_grad_scale(1.01)
    try:
        result = gc.run_case("conv2d", seed=0)
    finally:
        T.set_leaf_grad_scale(1.0)
    assert not result.passed


def test_rel_error_is_scale_free():
    a = np.array([1.0, 2.0, 3.0])
    assert gc.rel_error(a, a) == 0
    assert gc.rel_error(a * 1e-9, a * 1e-9 * 1.001) == pytest.approx(gc.rel_error(a, a * 1.001))
    assert gc.rel_error([0.0], [0.0]) == 0
