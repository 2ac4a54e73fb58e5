import numpy as np
import pytest
import torch
from scipy.special import gammaln
from scipy.stats import beta as beta_dist
from scipy.stats import dirichlet as dirichlet_dist

from rlfolio.agents.distributions import (
    beta_log_density,
    dirichlet_log_density,
    dirichlet_sample,
    hierarchical_action,
    hierarchical_log_density,
)
from rlfolio.agents.encoders import EncoderSpec, build_encoder
from rlfolio.agents.policies import PolicySpec, build_policy
from rlfolio.errors import DomainError


class TestDirichlet:
    def test_flat_density_is_log_gamma_n(self, rng):
        conc = np.ones(4)
        for _ in range(20):
            w, logp = dirichlet_sample(conc, rng)
            assert logp == pytest.approx(gammaln(4.0), abs=1e-12)

    def test_log_density_matches_scipy(self, rng):
        conc = np.array([2.0, 3.0, 5.0])
        for _ in range(10):
            w, logp = dirichlet_sample(conc, rng)
            assert logp == pytest.approx(dirichlet_dist.logpdf(w, conc), rel=1e-10)

    def test_monte_carlo_mean(self, rng):
        conc = np.array([2.0, 3.0, 5.0])
        samples = np.array([dirichlet_sample(conc, rng)[0] for _ in range(10_000)])
        np.testing.assert_allclose(samples.mean(axis=0), [0.2, 0.3, 0.5], atol=0.015)

    def test_symmetric_concentration_mean_uniform(self, rng):
        conc = np.full(5, 100.0)  # at the concentration cap
        samples = np.array([dirichlet_sample(conc, rng)[0] for _ in range(4000)])
        np.testing.assert_allclose(samples.mean(axis=0), 0.2, atol=0.01)

    def test_invalid_concentration(self, rng):
        with pytest.raises(DomainError):
            dirichlet_sample(np.array([1.0, np.nan]), rng)
        with pytest.raises(DomainError):
            dirichlet_sample(np.array([1.0, -2.0]), rng)

    def test_samples_on_simplex(self, rng):
        for _ in range(200):
            w, _ = dirichlet_sample(rng.uniform(0.5, 8, size=6), rng)
            assert abs(w.sum() - 1.0) < 1e-9
            assert (w >= 0).all()


class TestHierarchical:
    def test_beta_density_matches_scipy(self):
        for e, a, b in [(0.3, 2.0, 3.0), (0.9, 5.0, 1.2), (0.01, 0.7, 0.9)]:
            assert beta_log_density(e, a, b) == pytest.approx(
                beta_dist.logpdf(e, a, b), rel=1e-10)

    def test_equity_near_one_reduces_to_flat(self, rng):
        conc = np.array([2.0, 3.0])
        w, _ = hierarchical_action((5000.0, 1e-3), conc, rng)
        assert w[-1] == pytest.approx(0.0, abs=1e-3)
        assert abs(w.sum() - 1.0) < 1e-12

    def test_equity_near_zero_goes_to_cash(self, rng):
        w, _ = hierarchical_action((1e-3, 5000.0), np.array([2.0, 3.0]), rng)
        assert w[-1] == pytest.approx(1.0, abs=1e-3)

    def test_density_integrates_to_one_by_quadrature(self):
        """2-asset case: joint density over (equity fraction, first weight)."""
        a, b = 2.5, 1.8
        conc = np.array([2.0, 3.0])
        n = 400
        es = (np.arange(n) + 0.5) / n
        xs = (np.arange(n) + 0.5) / n
        total = 0.0
        for e in es:
            # w1 = e * x1 with x1 on (0,1): integrate over w1 in (0, e).
            w1 = e * xs
            w_full = np.stack([w1, e - w1, np.full(n, 1.0 - e)], axis=1)
            dens = np.exp([hierarchical_log_density(w, a, b, conc) for w in w_full])
            total += dens.sum() * (e / n) * (1.0 / n)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_sampled_mean_matches_analytic(self, rng):
        a, b = 3.0, 2.0
        conc = np.array([2.0, 6.0])
        samples = np.array([hierarchical_action((a, b), conc, rng)[0]
                            for _ in range(20_000)])
        e_mean = a / (a + b)
        expected = np.array([e_mean * 0.25, e_mean * 0.75, 1.0 - e_mean])
        np.testing.assert_allclose(samples.mean(axis=0), expected, atol=0.01)


def tiny_policy(structure, include_cash=True, k=2, seed=0):
    torch.manual_seed(seed)
    spec = EncoderSpec(kind="feedforward", hidden=16, layers=1, cross_attention=False)
    encoder = build_encoder(spec, n_asset_features=3, n_global_features=2)
    policy = build_policy(PolicySpec(structure=structure, head_hidden=16),
                          encoder.slot_dim, encoder.ctx_dim, include_cash)
    aw = torch.randn(4, 6, k, 3)
    gw = torch.randn(4, 6, 2)
    slots, ctx = encoder(aw, gw)
    return policy, slots, ctx


class TestTorchPolicies:
    def test_flat_log_prob_matches_reference_density(self):
        policy, slots, ctx = tiny_policy("flat")
        conc = policy.concentrations(slots, ctx).detach().numpy()
        w, logp = policy.sample(slots, ctx)
        w, logp = w.detach().numpy(), logp.detach().numpy()
        for i in range(w.shape[0]):
            assert logp[i] == pytest.approx(
                dirichlet_log_density(w[i], conc[i]), rel=1e-4, abs=1e-4)

    def test_hierarchical_log_prob_matches_reference_density(self):
        policy, slots, ctx = tiny_policy("hierarchical")
        a, b, conc = policy.parameters_for(slots, ctx)
        w, logp = policy.sample(slots, ctx)
        w, logp = w.detach().numpy(), logp.detach().numpy()
        a, b, conc = a.detach().numpy(), b.detach().numpy(), conc.detach().numpy()
        for i in range(w.shape[0]):
            assert logp[i] == pytest.approx(
                hierarchical_log_density(w[i], a[i], b[i], conc[i]), rel=1e-4, abs=1e-4)

    def test_sampled_actions_on_simplex(self):
        for structure in ("flat", "hierarchical"):
            policy, slots, ctx = tiny_policy(structure)
            for _ in range(50):
                w, _ = policy.sample(slots, ctx)
                total = w.sum(dim=-1).detach().numpy()
                np.testing.assert_allclose(total, 1.0, atol=1e-6)
                assert (w >= 0).all()

    def test_deterministic_action_is_mean(self):
        policy, slots, ctx = tiny_policy("flat")
        conc = policy.concentrations(slots, ctx)
        expected = (conc / conc.sum(dim=-1, keepdim=True)).detach().numpy()
        got = policy.deterministic(slots, ctx).detach().numpy()
        np.testing.assert_allclose(got, expected, atol=1e-7)

    def test_no_cash_flat_policy_has_k_outputs(self):
        policy, slots, ctx = tiny_policy("flat", include_cash=False)
        w, _ = policy.sample(slots, ctx)
        assert w.shape[-1] == 2

    def test_flat_density_integrates_to_one_1d(self):
        # Two outputs (one free coordinate): quadrature over w1.
        policy, slots, ctx = tiny_policy("flat", include_cash=False)
        conc = policy.concentrations(slots, ctx).detach().numpy()[0]
        n = 20_000
        w1 = (np.arange(n) + 0.5) / n
        dens = np.exp([dirichlet_log_density(np.array([x, 1 - x]), conc) for x in w1])
        assert dens.sum() / n == pytest.approx(1.0, abs=1e-3)

    def test_flat_density_integrates_to_one_2d(self):
        # Three outputs (two assets + cash): quadrature over (w1, w2).
        policy, slots, ctx = tiny_policy("flat", include_cash=True)
        conc = policy.concentrations(slots, ctx).detach().numpy()[0]
        conc = np.clip(conc, 1.05, None)  # keep the boundary integrable on a grid
        n = 700
        grid = (np.arange(n) + 0.5) / n
        total = 0.0
        for w1 in grid:
            w2 = grid[grid < 1.0 - w1]
            if w2.size == 0:
                continue
            pts = np.stack([np.full(w2.size, w1), w2, 1.0 - w1 - w2], axis=1)
            total += sum(np.exp(dirichlet_log_density(p, conc)) for p in pts) / (n * n)
        assert total == pytest.approx(1.0, abs=2e-3)
