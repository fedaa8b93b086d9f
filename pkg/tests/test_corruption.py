import numpy as np
import pytest

from hatgae import autodiff as ad
from hatgae.corruption import NodeMask, apply_corruption, init_noise, sample_node_mask
from hatgae.exceptions import AllClean
from hatgae.masking import HierarchicalFeatures


def test_extreme_rates():
    rng = np.random.default_rng(0)
    assert sample_node_mask(10, 0.0, rng).count == 0
    assert sample_node_mask(10, 1.0, rng).count == 10
    with pytest.raises(ValueError):
        sample_node_mask(10, 1.5, rng)


def test_binomial_concentration():
    tol = 3 * np.sqrt(0.25 / 10_000)
    for seed in range(20):
        frac = sample_node_mask(10_000, 0.5, np.random.default_rng(seed)).count / 10_000
        assert abs(frac - 0.5) <= tol


def test_resampling_guarantees_a_noisy_node():
    # with n=1 and pn=0.3 most first draws are empty
    for seed in range(30):
        assert sample_node_mask(1, 0.3, np.random.default_rng(seed)).count == 1


def test_all_clean_after_retries():
    with pytest.raises(AllClean):
        sample_node_mask(1, 1e-12, np.random.default_rng(0))


def test_mask_determinism():
    a = sample_node_mask(50, 0.4, np.random.default_rng(3))
    b = sample_node_mask(50, 0.4, np.random.default_rng(3))
    np.testing.assert_array_equal(a.flags, b.flags)


def corrupt(x, flags, w):
    tape = ad.Tape()
    return apply_corruption(x, NodeMask(np.array(flags)), tape.param("noise", np.array([w], float))).value


def test_corruption_examples():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert corrupt(x, [True, False], [0.5, -0.5]).tolist() == [[1.5, -0.5], [0.0, 1.0]]
    np.testing.assert_array_equal(corrupt(x, [False, False], [0.5, -0.5]), x)
    np.testing.assert_array_equal(corrupt(x, [True, True], [0.0, 0.0]), x)


def test_clean_rows_untouched_and_levels_accepted():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    mask = sample_node_mask(8, 0.5, rng)
    tape = ad.Tape()
    w = tape.param("noise", init_noise(3, rng))
    out = apply_corruption(HierarchicalFeatures(2, x), mask, w).value
    np.testing.assert_array_equal(out[~mask.flags], x[~mask.flags])
    np.testing.assert_allclose(out[mask.flags], x[mask.flags] + w.value)


def test_noise_gradient_counts_noisy_rows():
    tape = ad.Tape()
    w = tape.param("noise", np.zeros((1, 2)))
    out = apply_corruption(np.ones((4, 2)), NodeMask(np.array([True, False, True, True])), w)
    grads = tape.backward(ad.sum_all(out))
    assert grads["noise"].tolist() == [[3.0, 3.0]]


def test_shape_checks():
    tape = ad.Tape()
    with pytest.raises(ValueError):
        apply_corruption(np.ones((2, 2)), NodeMask(np.array([True])), tape.param("w", np.zeros((1, 2))))
    with pytest.raises(ValueError):
        apply_corruption(np.ones((2, 2)), NodeMask(np.array([True, False])), tape.param("w3", np.zeros((1, 3))))
