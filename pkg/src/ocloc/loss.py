"""Negative ELBO: sampling from q, closed-form KL terms and the pixel NLL."""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .config import ModelConfig, TrainConfig
from .decoder import DecoderOutput, LatentSample, log_likelihood
from .encoder import VariationalParams

UNIFORM_EPS = 1e-6


def _noise(shape, generator, like: torch.Tensor, kind: str = "normal") -> torch.Tensor:
    # drawn in float32 so float32 and float64 models see the same noise
    if kind == "normal":
        eps = torch.randn(shape, generator=generator)
    else:
        eps = torch.rand(shape, generator=generator)
    return eps.to(dtype=like.dtype, device=like.device)


def _check_temperature(temperature) -> None:
    if temperature == "hard":
        return
    if isinstance(temperature, str) or not float(temperature) > 0:
        raise ValueError(f"temperature must be > 0 or 'hard', got {temperature!r}")


def sample_beta(tau: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """rho ~ Beta(tau[..., 0], tau[..., 1]) as G1 / (G1 + G2) with Gamma draws;
    gradients flow pathwise through the Gamma sampler."""
    g1 = torch._standard_gamma(tau[..., 0], generator=generator)
    g2 = torch._standard_gamma(tau[..., 1], generator=generator)
    return g1 / (g1 + g2)


def relaxed_bernoulli(kappa: torch.Tensor, temperature: float,
                      generator: torch.Generator | None = None) -> torch.Tensor:
    """Concrete relaxation of Bernoulli(kappa) at the given temperature."""
    u = _noise(kappa.shape, generator, kappa, "uniform").clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    logistic = torch.log(u) - torch.log1p(-u)
    return torch.sigmoid((torch.logit(kappa) + logistic) / temperature)


def sample_latents(params: VariationalParams, generator: torch.Generator | None = None,
                   temperature: float | str = 1.0) -> LatentSample:
    """One joint draw from q.  ``temperature="hard"`` thresholds kappa at 0.5
    (evaluation only)."""
    _check_temperature(temperature)

    def gauss(mu, sigma):
        return mu + sigma * _noise(mu.shape, generator, mu)

    z_view = gauss(params.mu_view, params.sigma_view)
    z_bck = gauss(params.mu_bck, params.sigma_bck)
    z_obj = gauss(params.mu_obj, params.sigma_obj)
    rho = sample_beta(params.tau, generator)
    if temperature == "hard":
        z_prs = (params.kappa > 0.5).to(params.kappa.dtype)
    else:
        z_prs = relaxed_bernoulli(params.kappa, float(temperature), generator)
    return LatentSample(z_view=z_view, z_bck=z_bck, z_obj=z_obj, rho=rho, z_prs=z_prs,
                        temperature=temperature)


def posterior_mode(params: VariationalParams) -> LatentSample:
    """Deterministic latents for evaluation: means and hard presence."""
    tau = params.tau
    return LatentSample(
        z_view=params.mu_view, z_bck=params.mu_bck, z_obj=params.mu_obj,
        rho=tau[..., 0] / tau.sum(-1),
        z_prs=(params.kappa > 0.5).to(params.kappa.dtype),
        temperature="hard",
    )


# --- KL divergences ---------------------------------------------------------

def kl_normal_std(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    return 0.5 * (mu ** 2 + sigma ** 2 - 2.0 * torch.log(sigma) - 1.0).sum(dim=-1)


def kl_beta(tau: torch.Tensor, alpha: float, K: int) -> torch.Tensor:
    """KL(Beta(tau_1, tau_2) || Beta(alpha / K, 1)); tau [..., 2] -> [...]."""
    t1, t2 = tau[..., 0], tau[..., 1]
    a = alpha / K
    return (torch.lgamma(t1 + t2) - torch.lgamma(t1) - torch.lgamma(t2) - torch.log(torch.as_tensor(a, dtype=tau.dtype))
            + (t1 - a) * torch.digamma(t1) + (t2 - 1.0) * torch.digamma(t2)
            - (t1 + t2 - a - 1.0) * torch.digamma(t1 + t2))


def kl_bernoulli_expected(kappa: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
    """E_{rho ~ Beta(tau)} KL(Bernoulli(kappa) || Bernoulli(rho))."""
    t1, t2 = tau[..., 0], tau[..., 1]
    return (torch.digamma(t1 + t2)
            + kappa * (torch.log(kappa) - torch.digamma(t1))
            + (1.0 - kappa) * (torch.log1p(-kappa) - torch.digamma(t2)))


# --- the loss ---------------------------------------------------------------

@dataclass
class LossBreakdown:
    nll: torch.Tensor
    kl_view: torch.Tensor
    kl_bck: torch.Tensor
    kl_obj: torch.Tensor
    kl_rho: torch.Tensor
    kl_prs: torch.Tensor
    total: torch.Tensor

    TERMS = ("nll", "kl_view", "kl_bck", "kl_obj", "kl_rho", "kl_prs")

    def mean(self) -> "LossBreakdown":
        return LossBreakdown(**{f.name: getattr(self, f.name).mean() for f in fields(self)})

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach().mean()) for f in fields(self)}


def nll_term(x: torch.Tensor, out: DecoderOutput, sigma_x: float) -> torch.Tensor:
    """Single-sample estimate of -sum_{m,n} log p(x_mn | latents); x [B, M, N, C] -> [B]."""
    log_px = log_likelihood(x, out.pi, out.a, sigma_x)
    out.log_px = log_px
    return -log_px.sum(dim=(-2, -1))


def total_loss(x: torch.Tensor, params: VariationalParams, out: DecoderOutput,
               cfg: ModelConfig) -> LossBreakdown:
    """Per-scene loss terms, each of shape [B]."""
    nll = nll_term(x, out, cfg.sigma_x)
    terms = dict(
        nll=nll,
        kl_view=kl_normal_std(params.mu_view, params.sigma_view).sum(dim=-1),
        kl_bck=kl_normal_std(params.mu_bck, params.sigma_bck),
        kl_obj=kl_normal_std(params.mu_obj, params.sigma_obj).sum(dim=-1),
        kl_rho=kl_beta(params.tau, cfg.alpha, cfg.K).sum(dim=-1),
        kl_prs=kl_bernoulli_expected(params.kappa, params.tau).sum(dim=-1),
    )
    total = sum(terms.values())
    return LossBreakdown(total=total, **terms)


def temperature_at(step: int, train: TrainConfig) -> float:
    """Linear anneal from the initial to the final relaxation temperature."""
    if train.temperature_anneal_steps == 0:
        return train.gumbel_temperature_final
    frac = min(step / train.temperature_anneal_steps, 1.0)
    return train.gumbel_temperature_init + frac * (
        train.gumbel_temperature_final - train.gumbel_temperature_init)
