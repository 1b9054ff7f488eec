import math

import numpy as np
import pytest

from dmsg.model import ClassifierHead, classify, empty_head, extend_head
from dmsg.numerics import ops
from dmsg.numerics.tape import Tape, grad, gradient_check
from dmsg.replay import (D_CLAMP, DiscriminatorParams, VariationalParams, build_label_graph, cgse_loss, disc_loss,
                         init_discriminator, init_variational, kl_std_normal, mise_loss, rp_loss,
                         variational_sample)
from tests.oracles import scalar


def _silent_disc(h):
    # zero output layer: D = 0.5 everywhere
    dp = init_discriminator(h, seed=0)
    return dp.replace(W2=np.zeros_like(dp.W2), b2=np.zeros_like(dp.b2))


# ---------------------------------------------------------------------------
# variational layer
# ---------------------------------------------------------------------------


def test_zero_scale_layer_is_identity(rng):
    Z = rng.standard_normal((5, 4))
    vp = VariationalParams(np.zeros((4, 4)), np.zeros((1, 4)))
    Z_hat, mu, sigma = variational_sample(Z, vp, rng.standard_normal((5, 4)))
    np.testing.assert_array_equal(Z_hat, Z)
    np.testing.assert_array_equal(sigma, 0.0)


def test_zero_noise_returns_mean(rng):
    Z = rng.standard_normal((5, 4))
    Z_hat, mu, _ = variational_sample(Z, init_variational(4, seed=1), np.zeros((5, 4)))
    np.testing.assert_array_equal(Z_hat, Z)
    np.testing.assert_array_equal(mu, Z)


def test_unit_scale_monte_carlo_mean(rng):
    row = rng.standard_normal(3)
    Z = np.tile(row, (100_000, 1))
    vp = VariationalParams(np.zeros((3, 3)), np.ones((1, 3)))  # sigma = relu(1) = 1
    Z_hat, _, sigma = variational_sample(Z, vp, 2024)
    np.testing.assert_array_equal(sigma, 1.0)
    assert np.all(np.abs(Z_hat.mean(axis=0) - row) < 3 * 10 ** -2.5)


def test_noise_shape_checked(rng):
    with pytest.raises(ValueError):
        variational_sample(np.zeros((2, 3)), init_variational(3, seed=0), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------


def test_uninformative_discriminator():
    z = np.array([0.3, -1.0, 2.0, 0.5])
    assert disc_loss(z, -z, _silent_disc(4)) == pytest.approx(2 * math.log(0.5), abs=1e-15)


def test_perfect_discriminator_limit():
    dp = DiscriminatorParams(np.array([[1.0], [0.0]]), np.zeros((1, 1)), np.array([[80.0]]), np.array([[-40.0]]))
    v = disc_loss(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), dp)
    # both probabilities saturate at the clamp, so the loss sits just below zero
    assert v == pytest.approx(2 * math.log(1 - D_CLAMP), rel=1e-9)
    assert -1e-6 < v < 0.0


def test_disc_matches_scalar_oracle():
    for s in range(20):
        r = np.random.default_rng([5, s])
        dp = init_discriminator(6, seed=s)
        dp = dp.replace(b1=r.standard_normal(dp.b1.shape), b2=r.standard_normal((1, 1)))
        z, z_hat = r.standard_normal(6), r.standard_normal(6)
        expected = scalar.disc_objective(z, z_hat, (dp.W1, dp.b1, dp.W2, dp.b2))
        assert disc_loss(z, z_hat, dp) == pytest.approx(expected, rel=1e-12, abs=1e-14)


def test_mise_identical_inputs():
    r = np.random.default_rng(3)
    Z = r.standard_normal((6, 4))
    assert mise_loss(Z, Z, _silent_disc(4)) == pytest.approx(-2 * math.log(2), abs=1e-15)
    # with any discriminator, log D + log(1 - D) on identical rows is at most -2 ln 2
    assert mise_loss(Z, Z, init_discriminator(4, seed=9)) <= -2 * math.log(2) + 1e-12


def test_mise_gradient_reversed_on_inputs():
    r = np.random.default_rng(4)
    Z0, Zh0 = r.standard_normal((5, 4)), r.standard_normal((5, 4))
    dp = init_discriminator(4, seed=2)

    def f(t, leaves):
        return mise_loss(leaves[0], leaves[1], dp)

    def negated(ps):
        return -mise_loss(ps[0], ps[1], dp)
    # tape gradient w.r.t. the inputs is minus the true slope
    assert gradient_check(f, [Z0, Zh0], value_fn=negated) < 1e-6
    t = Tape()
    a, b = t.leaf(Z0), t.leaf(Zh0)
    grad(mise_loss(a, b, dp))
    rev = [n for n in t.nodes if n.op == "reverse_grad"]
    assert len(rev) == 2
    np.testing.assert_array_equal(a.grad, -rev[0].grad)
    np.testing.assert_array_equal(b.grad, -rev[1].grad)


def test_mise_discriminator_gradient():
    r = np.random.default_rng(6)
    Z, Zh = r.standard_normal((5, 4)), r.standard_normal((5, 4))
    dp0 = init_discriminator(4, seed=3)
    dp0 = dp0.replace(b1=0.1 * r.standard_normal(dp0.b1.shape))

    def f(t, leaves):
        return mise_loss(Z, Zh, DiscriminatorParams(*leaves))
    assert gradient_check(f, [v for _, v in dp0.items()]) < 1e-4


def test_mise_row_mismatch():
    with pytest.raises(ValueError):
        mise_loss(np.zeros((2, 3)), np.zeros((3, 3)), init_discriminator(3, seed=0))


# ---------------------------------------------------------------------------
# label graph, KL, reconstruction
# ---------------------------------------------------------------------------


def test_label_graph_examples():
    A = build_label_graph([0, 0, 1])
    assert {(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(A)))} == {(0, 1)}
    assert build_label_graph([0, 1, 2, 3]).sum() == 0
    b = 5
    assert np.triu(build_label_graph([0] * b + [1] * b)).sum() == 2 * math.comb(b, 2)
    with pytest.raises(ValueError):
        build_label_graph([1])


def test_kl_prior_is_zero():
    assert kl_std_normal(np.zeros((3, 4)), np.ones((3, 4))) == 0.0


def test_kl_worked_example():
    assert kl_std_normal(np.array([[1.0, 0.0]]), np.ones((1, 2))) == 0.5


def test_kl_matches_loop_oracle(rng):
    mu, sigma = rng.standard_normal((4, 3)), rng.uniform(0.0, 2.0, (4, 3))
    sigma[0, 0] = 0.0  # floored
    assert kl_std_normal(mu, sigma) == pytest.approx(scalar.kl_rows(mu, sigma), rel=1e-12)


def test_kl_monte_carlo():
    for s in range(5):
        r = np.random.default_rng([11, s])
        mu, sigma = r.standard_normal((2, 3)), r.uniform(0.5, 2.0, (2, 3))
        mc = scalar.kl_monte_carlo(mu, sigma, 100_000, r)
        assert abs(kl_std_normal(mu, sigma) - mc) <= 0.01 * abs(mc)


def test_kl_negative_sigma():
    with pytest.raises(ValueError):
        kl_std_normal(np.zeros((1, 2)), -np.ones((1, 2)))


def test_kl_gradient_with_floor(rng):
    mu0 = rng.standard_normal((3, 2))
    s0 = rng.uniform(0.3, 1.5, (3, 2))

    def f(t, leaves):
        return kl_std_normal(leaves[0], leaves[1])
    assert gradient_check(f, [mu0, s0]) < 1e-6


def test_cgse_uninformative_embeddings():
    n, h = 4, 3
    A = build_label_graph([0, 0, 1, 1])
    v = cgse_loss(np.zeros((n, h)), A, np.zeros((n, h)), np.ones((n, h)))
    assert v == pytest.approx(math.log(2), abs=1e-15)


def test_cgse_saturated_pair():
    Z = np.array([[10.0, 0.0], [10.0, 0.0]])
    v = cgse_loss(Z, build_label_graph([0, 0]), np.zeros((2, 2)), np.ones((2, 2)))
    assert 0.0 < v < 1e-40


def test_cgse_matches_double_loop():
    for s in range(10):
        r = np.random.default_rng([12, s])
        n, h = int(r.integers(2, 8)), int(r.integers(1, 5))
        labels = r.integers(0, 3, size=n)
        Zh, mu, sigma = r.standard_normal((n, h)), r.standard_normal((n, h)), r.uniform(0.1, 2, (n, h))
        expected = scalar.cgse(Zh, labels, mu, sigma)
        assert cgse_loss(Zh, build_label_graph(labels), mu, sigma) == pytest.approx(expected, rel=1e-10)


def test_cgse_pair_subsampling_is_seeded(rng):
    n = 10
    Zh = rng.standard_normal((n, 3))
    A = build_label_graph(np.arange(n) % 2)
    a = cgse_loss(Zh, A, Zh, np.ones((n, 3)), max_pairs=7, rng=np.random.default_rng(1))
    b = cgse_loss(Zh, A, Zh, np.ones((n, 3)), max_pairs=7, rng=np.random.default_rng(1))
    assert a == b
    with pytest.raises(ValueError):
        cgse_loss(Zh, A[:5, :5], Zh, np.ones((n, 3)))


# ---------------------------------------------------------------------------
# replay classification
# ---------------------------------------------------------------------------


def test_rp_perfect_head():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    head = ClassifierHead(40.0 * np.eye(2), np.zeros((1, 2)))
    Z_hat, _, _ = variational_sample(Z, VariationalParams(np.zeros((2, 2)), np.zeros((1, 2))), np.ones((2, 2)))
    assert rp_loss(Z_hat, [0, 1], head) < 1e-15


def test_rp_uniform():
    head = ClassifierHead(np.zeros((3, 4)), np.zeros((1, 4)))
    assert rp_loss(np.ones((5, 3)), [0, 1, 2, 3, 0], head) == pytest.approx(math.log(4), abs=1e-15)


def test_rp_composition(rng):
    Zh = rng.standard_normal((6, 4))
    head = extend_head(empty_head(4), 3, 0.5, seed=0)
    y = rng.integers(0, 3, size=6)
    logits, _ = classify(Zh, head)
    t = Tape()
    expected = ops.softmax_cross_entropy(t.leaf(logits), y)[0].item()
    assert rp_loss(Zh, y, head) == pytest.approx(expected, rel=1e-14)
