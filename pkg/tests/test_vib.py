import numpy as np
import pytest

import curvib.autodiff as ad
from curvib.autodiff import Parameter, Tape, grad_check
from curvib.graph import LabelSet
from curvib.vib import (GaussianPosterior, compression_loss, prediction_loss,
                        reparameterize, vib_loss)


def posterior(tape, mu, log_var):
    return GaussianPosterior(mu=tape.constant(mu), log_var=tape.constant(log_var))


def label_set(labels, train=None):
    labels = np.asarray(labels)
    n = labels.shape[0]
    train = np.ones(n, dtype=bool) if train is None else np.asarray(train)
    return LabelSet(labels=labels, train_mask=train,
                    val_mask=np.zeros(n, dtype=bool),
                    test_mask=np.zeros(n, dtype=bool))


class TestReparameterize:
    def test_variance_collapse(self):
        tape = Tape()
        mu = np.full((3, 2), 1.5)
        post = posterior(tape, mu, np.full((3, 2), -10.0))
        z = reparameterize(post, seed=0)
        assert np.max(np.abs(z.data - mu)) <= np.exp(-5) * 6

    def test_fixed_seed_identical(self):
        tape = Tape()
        post = posterior(tape, np.zeros((4, 3)), np.zeros((4, 3)))
        z1 = reparameterize(post, seed=7, )
        tape2 = Tape()
        post2 = posterior(tape2, np.zeros((4, 3)), np.zeros((4, 3)))
        z2 = reparameterize(post2, seed=7)
        assert np.array_equal(z1.data, z2.data)

    def test_sample_mean_matches_mu(self):
        mu = np.array([[0.7, -1.2]])
        draws = np.zeros((10_000, 2))
        for k in range(10_000):
            tape = Tape()
            post = posterior(tape, mu, np.zeros((1, 2)))
            draws[k] = reparameterize(post, 11, k).data[0]
        # sigma = 1, so the mean over 1e4 draws lands within 4 sigma / 100
        assert np.max(np.abs(draws.mean(axis=0) - mu[0])) <= 4.0 / 100.0

    def test_gradient_flows_through_mu_and_log_var(self):
        rng = np.random.default_rng(1)
        mu = Parameter("mu", rng.normal(size=(3, 2)))
        lv = Parameter("lv", rng.normal(size=(3, 2)) * 0.1)

        def build(tape):
            post = GaussianPosterior(tape.watch(mu), tape.watch(lv))
            z = reparameterize(post, seed=5)
            return ad.mean_all(ad.square(z))

        assert grad_check(build, [mu, lv], step=1e-5) <= 1e-6


class TestPredictionLoss:
    def test_perfect_prediction_limit(self):
        tape = Tape()
        logits = tape.constant([[40.0, 0.0], [0.0, 40.0]])
        labels = label_set([0, 1])
        loss = prediction_loss(logits, labels, labels.train_mask)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_ln_c(self):
        for c in (2, 3, 7):
            tape = Tape()
            logits = tape.constant(np.zeros((5, c)))
            labels = label_set(np.arange(5) % c)
            loss = prediction_loss(logits, labels, labels.train_mask)
            assert loss.item() == pytest.approx(np.log(c), abs=1e-12)

    def test_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, c = int(rng.integers(3, 12)), int(rng.integers(2, 6))
            raw = rng.normal(size=(n, c)) * 3
            y = rng.integers(0, c, size=n)
            mask = rng.random(n) < 0.6
            if not mask.any():
                mask[0] = True
            tape = Tape()
            labels = label_set(y, train=mask)
            got = prediction_loss(tape.constant(raw), labels, mask).item()
            # independent direct sum
            probs = np.exp(raw) / np.exp(raw).sum(axis=1, keepdims=True)
            expected = float(np.mean([-np.log(probs[i, y[i]])
                                      for i in np.flatnonzero(mask)]))
            assert got == pytest.approx(expected, abs=1e-12)

    def test_empty_mask_rejected(self):
        tape = Tape()
        labels = label_set([0, 1], train=np.zeros(2, dtype=bool))
        with pytest.raises(ValueError):
            prediction_loss(tape.constant(np.zeros((2, 2))), labels, labels.train_mask)

    def test_permutation_invariance_within_mask(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(6, 3))
        y = rng.integers(0, 3, size=6)
        mask = np.ones(6, dtype=bool)
        perm = rng.permutation(6)
        tape = Tape()
        a = prediction_loss(tape.constant(raw), label_set(y), mask).item()
        tape = Tape()
        b = prediction_loss(tape.constant(raw[perm]), label_set(y[perm]), mask).item()
        assert a == pytest.approx(b, abs=1e-12)


class TestCompressionLoss:
    def test_prior_equals_posterior(self):
        tape = Tape()
        post = posterior(tape, np.zeros((4, 3)), np.zeros((4, 3)))
        loss = compression_loss(post, np.ones(4, dtype=bool))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_half(self):
        tape = Tape()
        post = posterior(tape, np.ones((1, 1)), np.zeros((1, 1)))
        loss = compression_loss(post, np.ones(1, dtype=bool))
        assert loss.item() == pytest.approx(0.5, abs=1e-12)

    def test_nonnegative_over_random_posteriors(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n, h = int(rng.integers(1, 8)), int(rng.integers(1, 6))
            tape = Tape()
            post = posterior(tape, rng.normal(size=(n, h)) * 3,
                             rng.uniform(-6, 6, size=(n, h)))
            assert compression_loss(post, np.ones(n, dtype=bool)).item() >= 0.0

    def test_matches_monte_carlo_kl(self):
        rng = np.random.default_rng(5)
        n_samples = 100_000
        for _ in range(20):
            mu = float(rng.normal()) * 1.5
            log_var = float(rng.uniform(-2, 2))
            sigma = np.exp(log_var / 2)
            tape = Tape()
            post = posterior(tape, [[mu]], [[log_var]])
            closed = compression_loss(post, np.ones(1, dtype=bool)).item()
            z = mu + sigma * rng.standard_normal(n_samples)
            # log q(z) - log r(z) under q
            log_q = -0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
            log_r = -0.5 * z ** 2 - 0.5 * np.log(2 * np.pi)
            samples = log_q - log_r
            mc = samples.mean()
            se = samples.std(ddof=1) / np.sqrt(n_samples)
            assert abs(closed - mc) <= 3 * max(se, 1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(6)
        mu = Parameter("mu", rng.normal(size=(4, 3)))
        lv = Parameter("lv", rng.normal(size=(4, 3)))
        mask = np.array([True, False, True, True])

        def build(tape):
            return compression_loss(GaussianPosterior(tape.watch(mu), tape.watch(lv)), mask)

        assert grad_check(build, [mu, lv], step=1e-5) <= 1e-6


class TestVibLoss:
    def test_beta_zero_degenerate(self):
        tape = Tape()
        parts = vib_loss(tape.constant([[1.7]]), tape.constant([[9.0]]), 0.0)
        assert parts.total.item() == pytest.approx(1.7)

    def test_arithmetic(self):
        tape = Tape()
        parts = vib_loss(tape.constant([[1.0]]), tape.constant([[2.0]]), 0.1)
        assert parts.total.item() == pytest.approx(1.2, abs=1e-15)

    def test_negative_beta_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError):
            vib_loss(tape.constant([[1.0]]), tape.constant([[1.0]]), -0.5)
