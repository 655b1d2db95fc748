import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from ocloc.config import TrainConfig
from ocloc.encoder import VariationalParams
from ocloc.loss import (kl_bernoulli_expected, kl_beta, kl_normal_std, posterior_mode,
                        relaxed_bernoulli, sample_beta, sample_latents, temperature_at, total_loss)
from ocloc import decoder as decoder_module
from ocloc.decoder import exact_layer_weights, surrogate_layer_weights
from ocloc.model import OCLOC
from conftest import tiny_model_config
from oracles import FrozenExact

f64 = dict(dtype=torch.float64)


def params_like(cfg, B=1, M=2, sigma=1.0, mu=0.0, tau=None, kappa=0.5):
    K = cfg.K
    return VariationalParams(
        mu_view=torch.full((B, M, cfg.E_view), mu, **f64),
        sigma_view=torch.full((B, M, cfg.E_view), sigma, **f64),
        mu_bck=torch.full((B, cfg.E_bck), mu, **f64),
        sigma_bck=torch.full((B, cfg.E_bck), sigma, **f64),
        mu_obj=torch.full((B, K, cfg.E_obj), mu, **f64),
        sigma_obj=torch.full((B, K, cfg.E_obj), sigma, **f64),
        tau=(torch.tensor([cfg.alpha / K, 1.0], **f64) if tau is None else tau).expand(B, K, 2).clone(),
        kappa=torch.full((B, K), kappa, **f64),
    )


def test_kl_normal_examples():
    assert kl_normal_std(torch.zeros(5, **f64), torch.ones(5, **f64)).item() == 0
    assert kl_normal_std(torch.ones(1, **f64), torch.ones(1, **f64)).item() == pytest.approx(0.5)
    assert kl_normal_std(torch.zeros(1, **f64), torch.full((1,), 0.5, **f64)).item() == \
        pytest.approx(0.31815, abs=1e-5)


def test_kl_beta_examples():
    assert kl_beta(torch.tensor([4.5 / 7, 1.0], **f64), 4.5, 7).item() == pytest.approx(0, abs=1e-12)
    expected = -math.log(4.5 / 7) - (1 - 4.5 / 7)
    assert kl_beta(torch.tensor([1.0, 1.0], **f64), 4.5, 7).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.08469, abs=1e-5)


def test_kl_bernoulli_examples():
    tau = torch.tensor([1.0, 1.0], **f64)
    assert kl_bernoulli_expected(torch.tensor(0.5, **f64), tau).item() == \
        pytest.approx(1 - math.log(2), abs=1e-12)
    assert kl_bernoulli_expected(torch.tensor(1 - 1e-12, **f64), tau).item() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(mu=st.floats(-5, 5), sigma=st.floats(1e-3, 10), t1=st.floats(0.02, 50), t2=st.floats(0.02, 50),
       kappa=st.floats(1e-4, 1 - 1e-4), alpha=st.floats(0.1, 10), K=st.integers(1, 10))
def test_kl_nonnegative(mu, sigma, t1, t2, kappa, alpha, K):
    tau = torch.tensor([t1, t2], **f64)
    assert kl_normal_std(torch.tensor([mu], **f64), torch.tensor([sigma], **f64)).item() >= -1e-12
    assert kl_beta(tau, alpha, K).item() >= -1e-9
    assert kl_bernoulli_expected(torch.tensor(kappa, **f64), tau).item() >= -1e-9


def test_zero_sigma_gives_mean():
    cfg = tiny_model_config()
    p = params_like(cfg, sigma=0.0, mu=0.7)
    z = sample_latents(p, torch.Generator().manual_seed(0), 1.0)
    assert torch.all(z.z_view == 0.7) and torch.all(z.z_obj == 0.7) and torch.all(z.z_bck == 0.7)


def test_low_temperature_concentrates():
    kappa = torch.full((100000,), 0.3, **f64)
    z = relaxed_bernoulli(kappa, 1e-3, torch.Generator().manual_seed(0))
    near = ((z < 1e-3) | (z > 1 - 1e-3)).double().mean().item()
    assert near > 0.99
    assert z.mean().item() == pytest.approx(0.3, abs=0.01)


def test_beta_sampler_moments():
    tau = torch.tensor([[2.0, 5.0]], **f64).expand(200000, 2)
    rho = sample_beta(tau, torch.Generator().manual_seed(0))
    assert rho.mean().item() == pytest.approx(2 / 7, abs=3e-3)
    assert rho.var().item() == pytest.approx(10 / (49 * 8), abs=2e-3)


def test_beta_sampler_pathwise_gradient():
    tau = torch.tensor([2.0, 3.0], **f64, requires_grad=True)
    rho = sample_beta(tau.expand(100000, 2), torch.Generator().manual_seed(0))
    rho.mean().backward()
    # d/dt1 of t1/(t1+t2) = t2/(t1+t2)^2 = 0.12, d/dt2 = -0.08
    assert tau.grad[0].item() == pytest.approx(0.12, abs=0.01)
    assert tau.grad[1].item() == pytest.approx(-0.08, abs=0.01)


@pytest.mark.parametrize("bad", [0.0, -1.0, "cold"])
def test_invalid_temperature(bad):
    cfg = tiny_model_config()
    with pytest.raises(ValueError, match="temperature"):
        sample_latents(params_like(cfg), None, bad)


def test_hard_and_mode():
    cfg = tiny_model_config(K=3)
    p = params_like(cfg)
    p.kappa = torch.tensor([[0.2, 0.7, 0.51]], **f64)
    z = sample_latents(p, torch.Generator().manual_seed(0), "hard")
    assert z.z_prs.tolist() == [[0.0, 1.0, 1.0]]
    mode = posterior_mode(p)
    assert torch.equal(mode.z_obj, p.mu_obj) and mode.z_prs.tolist() == [[0.0, 1.0, 1.0]]


def _model(cfg):
    torch.manual_seed(0)
    return OCLOC(cfg).double()


def test_breakdown_sums_and_prior_posterior():
    cfg = tiny_model_config()
    model = _model(cfg)
    x = torch.rand(2, 2, cfg.N, 3, **f64)
    r = model(x, torch.Generator().manual_seed(0), 1.0)
    terms = sum(getattr(r.loss, t) for t in r.loss.TERMS)
    assert torch.allclose(r.loss.total, terms, atol=1e-9)
    # posteriors set to the priors: the Gaussian and Beta terms vanish; the
    # presence term compares against a random rho and stays positive
    p = params_like(cfg, B=2, M=2)
    lat = sample_latents(p, torch.Generator().manual_seed(0), 1.0)
    out = model.decoder(lat)
    br = total_loss(x, p, out, cfg)
    for t in ("kl_view", "kl_bck", "kl_obj", "kl_rho"):
        assert torch.allclose(getattr(br, t), torch.zeros(2, **f64), atol=1e-12)
    assert torch.allclose(br.total, br.nll + br.kl_prs, atol=1e-9)


def test_gradient_wrt_mu_obj_matches_finite_differences(monkeypatch):
    cfg = tiny_model_config()
    model = _model(cfg)
    x = torch.rand(1, 2, cfg.N, 3, **f64)
    params = model.encoder(x, torch.Generator().manual_seed(1)).map(lambda t: t.detach())

    def loss(mu_obj):
        params.mu_obj = mu_obj
        lat = sample_latents(params, torch.Generator().manual_seed(2), 1.0)
        return total_loss(x, params, model.decoder(lat), cfg).total.sum()

    mu0 = params.mu_obj.clone()
    mu = mu0.clone().requires_grad_(True)
    value = loss(mu)
    (grad,) = torch.autograd.grad(value, mu)

    frozen = FrozenExact(exact_layer_weights, surrogate_layer_weights)
    monkeypatch.setattr(decoder_module, "layer_weights", frozen)
    frozen.start_pass()
    assert loss(mu0).item() == pytest.approx(value.item(), rel=1e-12)
    frozen.recording = False
    h = 1e-6
    fd = torch.zeros_like(mu0)
    for idx in np.ndindex(*mu0.shape):
        e = torch.zeros_like(mu0)
        e[idx] = h
        frozen.start_pass()
        up = loss(mu0 + e)
        frozen.start_pass()
        down = loss(mu0 - e)
        fd[idx] = (up - down) / (2 * h)
    assert torch.allclose(grad, fd, rtol=1e-3, atol=1e-6)


def test_temperature_schedule():
    t = TrainConfig(gumbel_temperature_init=2.0, gumbel_temperature_final=0.5,
                    temperature_anneal_steps=100)
    assert temperature_at(0, t) == 2.0
    assert temperature_at(50, t) == pytest.approx(1.25)
    assert temperature_at(100, t) == 0.5 and temperature_at(10 ** 6, t) == 0.5
