"""Compositional decoder: slot networks, layer compositing and pixel likelihood.

Tensors carry a leading batch axis ``B`` (scenes).  Pixels are flattened
row-major to ``N = H * W``.  Layer index 0 is the background and 1..K are
object slots, so weights such as ``pi`` have ``K + 1`` layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Literal

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig

Mode = Literal["straight_through", "exact", "surrogate"]

LOGIT_CLAMP = 16.0
SURROGATE_EPS = 1e-12
LOG_FLOOR = 1e-30


@dataclass
class LatentSample:
    z_view: torch.Tensor   # [B, M, E_view]
    z_bck: torch.Tensor    # [B, E_bck]
    z_obj: torch.Tensor    # [B, K, E_obj]
    rho: torch.Tensor      # [B, K]
    z_prs: torch.Tensor    # [B, K]
    temperature: float | str = "hard"

    def detach(self) -> "LatentSample":
        return LatentSample(self.z_view.detach(), self.z_bck.detach(), self.z_obj.detach(),
                            self.rho.detach(), self.z_prs.detach(), self.temperature)


@dataclass
class RawSlots:
    """Per-(view, slot) network outputs before compositing."""

    sdw_logits: torch.Tensor   # [B, M, K, N]  shadow silhouette
    obj_logits: torch.Tensor   # [B, M, K, N]  complete object silhouette
    order: torch.Tensor        # [B, M, K]
    apc: torch.Tensor          # [B, M, K, N, C] object appearance
    sdw_apc_logits: torch.Tensor  # [B, M, K, N] shadow darkening multiplier


@dataclass
class DecoderOutput:
    s_sdw: torch.Tensor   # [B, M, K, N]
    s_obj: torch.Tensor   # [B, M, K, N]
    o: torch.Tensor       # [B, M, K]
    zeta: torch.Tensor    # [B, M, K+1, N]
    pi: torch.Tensor      # [B, M, K+1, N]
    b: torch.Tensor       # [B, M, K+1, N, C]
    a: torch.Tensor       # [B, M, K+1, N, C]
    log_px: torch.Tensor | None = None  # [B, M, N]

    def recon(self) -> torch.Tensor:
        """Mean image: sum_k pi_k a_k, shape [B, M, N, C]."""
        return (self.pi.unsqueeze(-1) * self.a).sum(dim=-3)

    def map(self, fn) -> "DecoderOutput":
        return DecoderOutput(**{f.name: None if getattr(self, f.name) is None
                                else fn(getattr(self, f.name)) for f in fields(self)})


# --- networks ---------------------------------------------------------------

def grid_coords(height: int, width: int) -> torch.Tensor:
    """[height * width, 2] coordinates in [-1, 1], row-major."""
    ys = torch.linspace(-1.0, 1.0, height)
    xs = torch.linspace(-1.0, 1.0, width)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx, yy], dim=-1).reshape(-1, 2)


def mlp(sizes: list[int], final_act: bool = False) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(fan_in, fan_out))
        if i < len(sizes) - 2 or final_act:
            layers.append(nn.SiLU())
    return nn.Sequential(*layers)


class SinusoidPositionEmbedding(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.proj = nn.Linear(2, width)

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        return torch.sin(self.proj(coords))


class BroadcastDecoder(nn.Module):
    """Latent -> MLP -> broadcast over a coarse grid + sinusoid positions ->
    transformer blocks -> transposed-convolution upsampling to full size."""

    def __init__(self, in_dim: int, width: int, heads: int, out_channels: int,
                 grid: tuple[int, int], upsample: int, num_layers: int = 2):
        super().__init__()
        self.grid = grid
        self.fc = mlp([in_dim, 4 * width, 4 * width, width], final_act=True)
        self.pos = SinusoidPositionEmbedding(width)
        self.register_buffer("coords", grid_coords(*grid), persistent=False)
        layer = nn.TransformerEncoderLayer(
            width, heads, dim_feedforward=2 * width, dropout=0.0,
            activation=F.silu, batch_first=True, norm_first=True)
        self.transformer = nn.TransformerEncoder(layer, num_layers, enable_nested_tensor=False)
        convs: list[nn.Module] = []
        ch = width
        for i in range(upsample):
            c_up = max(width >> i, 4)
            convs += [nn.ConvTranspose2d(ch, c_up, 4, stride=2, padding=1), nn.SiLU()]
            ch = c_up
            if i < upsample - 1:
                c_next = max(width >> (i + 1), 4)
                convs += [nn.ConvTranspose2d(ch, c_next, 3, padding=1), nn.SiLU()]
                ch = c_next
        convs.append(nn.ConvTranspose2d(ch, out_channels, 3, padding=1))
        self.convs = nn.Sequential(*convs)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """z: [P, in_dim] -> [P, N, out_channels]."""
        h = self.fc(z).unsqueeze(1) + self.pos(self.coords)
        h = self.transformer(h)
        gh, gw = self.grid
        h = h.transpose(1, 2).reshape(z.shape[0], -1, gh, gw)
        out = self.convs(h)
        return out.flatten(2).transpose(1, 2)


class Decoder(nn.Module):
    """The generative networks f_bck, f_ord and the shared object decoder
    (appearance, object silhouette, shadow silhouette, shadow multiplier)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        grid = cfg.grid_size
        self.bck_net = BroadcastDecoder(cfg.E_view + cfg.E_bck, cfg.bck_width, cfg.bck_heads,
                                        cfg.C, grid, cfg.dec_upsample)
        self.obj_net = BroadcastDecoder(cfg.E_view + cfg.E_obj, cfg.obj_width, cfg.obj_heads,
                                        cfg.C + 3, grid, cfg.dec_upsample)
        self.ord_net = mlp([cfg.E_view + cfg.E_obj, cfg.mlp_hidden, cfg.mlp_hidden, 1])

    def decode_slots(self, z_view: torch.Tensor, z_obj: torch.Tensor) -> RawSlots:
        """Run the slot networks on every (view, slot) pair.

        z_view [B, M, E_view], z_obj [B, K, E_obj].
        """
        if z_view.shape[0] != z_obj.shape[0]:
            raise ValueError(f"batch mismatch: z_view {tuple(z_view.shape)}, z_obj {tuple(z_obj.shape)}")
        if z_view.shape[-1] != self.cfg.E_view or z_obj.shape[-1] != self.cfg.E_obj:
            raise ValueError("latent widths do not match the model config")
        B, M, _ = z_view.shape
        K = z_obj.shape[1]
        pair = torch.cat([z_view[:, :, None].expand(B, M, K, -1),
                          z_obj[:, None].expand(B, M, K, -1)], dim=-1)
        flat = pair.reshape(B * M * K, -1)
        out = self.obj_net(flat).reshape(B, M, K, self.cfg.N, self.cfg.C + 3)
        C = self.cfg.C
        return RawSlots(
            sdw_logits=out[..., C + 1],
            obj_logits=out[..., C],
            order=self.ord_net(flat).reshape(B, M, K),
            apc=out[..., :C],
            sdw_apc_logits=out[..., C + 2],
        )

    def decode_background(self, z_view: torch.Tensor, z_bck: torch.Tensor) -> torch.Tensor:
        """z_view [B, M, E_view], z_bck [B, E_bck] -> b0 [B, M, N, C]."""
        B, M, _ = z_view.shape
        inp = torch.cat([z_view, z_bck[:, None].expand(B, M, -1)], dim=-1)
        return self.bck_net(inp.reshape(B * M, -1)).reshape(B, M, self.cfg.N, self.cfg.C)

    def forward(self, latent: LatentSample, mode: Mode = "straight_through") -> DecoderOutput:
        raw = self.decode_slots(latent.z_view, latent.z_obj)
        b0 = self.decode_background(latent.z_view, latent.z_bck)
        return compose(raw, b0, latent.z_prs, mode=mode)


# --- compositing ------------------------------------------------------------

def occlusion_mask(o: torch.Tensor) -> torch.Tensor:
    """[..., K] -> [..., K, K] with [j, k] = 1 where slot j is in front of slot k.

    Larger o is nearer; equal values are broken by slot index (lower in front).
    """
    K = o.shape[-1]
    oj, ok = o[..., :, None], o[..., None, :]
    idx = torch.arange(K, device=o.device)
    lower = idx[:, None] < idx[None, :]
    return (oj > ok) | ((oj == ok) & lower)


def exact_layer_weights(s: torch.Tensor, o: torch.Tensor) -> torch.Tensor:
    """Occlusion-ordered products.

    s [..., K, N] silhouettes, o [..., K] -> weights [..., K+1, N] where layer 0
    is prod_k (1 - s_k) and layer k is s_k * prod_{j in front of k} (1 - s_j).
    """
    occ = occlusion_mask(o).to(s.dtype)                     # [..., K(j), K(k)]
    factors = 1.0 - occ[..., :, :, None] * s[..., :, None, :]  # [..., K(j), K(k), N]
    w_obj = s * factors.prod(dim=-3)
    w0 = (1.0 - s).prod(dim=-2, keepdim=True)
    return torch.cat([w0, w_obj], dim=-2)


def surrogate_layer_weights(s: torch.Tensor, o: torch.Tensor) -> torch.Tensor:
    """Smooth stand-in: layer k gets (1 - w0) * s_k e^{o_k} / sum_j s_j e^{o_j}."""
    w0 = (1.0 - s).prod(dim=-2, keepdim=True)
    e = torch.exp(o - o.max(dim=-1, keepdim=True).values.detach())[..., None]  # [..., K, 1]
    num = s * e
    w_obj = (1.0 - w0) * num / (num.sum(dim=-2, keepdim=True) + SURROGATE_EPS)
    return torch.cat([w0, w_obj], dim=-2)


class _PassThrough(torch.autograd.Function):
    """Returns ``value`` unchanged; routes the incoming gradient to ``proxy``."""

    @staticmethod
    def forward(ctx, value, proxy):
        return value.clone()

    @staticmethod
    def backward(ctx, grad):
        return None, grad


def layer_weights(s: torch.Tensor, o: torch.Tensor, mode: Mode = "straight_through") -> torch.Tensor:
    if mode == "exact":
        return exact_layer_weights(s, o)
    if mode == "surrogate":
        return surrogate_layer_weights(s, o)
    if mode != "straight_through":
        raise ValueError(f"unknown mode {mode!r}")
    with torch.no_grad():
        exact = exact_layer_weights(s, o)
    if not (s.requires_grad or o.requires_grad):
        return exact
    return _PassThrough.apply(exact, surrogate_layer_weights(s, o))


def straight_through_weights(s_sdw: torch.Tensor, s_obj: torch.Tensor,
                             o: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(zeta, pi): ordering-based values forward, softmax-surrogate gradients backward."""
    return layer_weights(s_sdw, o), layer_weights(s_obj, o)


def compose(raw: RawSlots, b0: torch.Tensor, z_prs: torch.Tensor,
            mode: Mode = "straight_through") -> DecoderOutput:
    """Combine slot outputs into silhouettes, layer weights and layer images."""
    prs = z_prs[:, None, :, None]                                  # [B, 1, K, 1]
    s_sdw = prs * torch.sigmoid(raw.sdw_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    s_obj = prs * (1.0 - s_sdw) * torch.sigmoid(raw.obj_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    zeta = layer_weights(s_sdw, raw.order, mode)
    pi = layer_weights(s_obj, raw.order, mode)
    b_shadow = b0[:, :, None] * torch.sigmoid(raw.sdw_apc_logits)[..., None]  # [B, M, K, N, C]
    b = torch.cat([b0[:, :, None], b_shadow], dim=2)
    a0 = (zeta[..., None] * b).sum(dim=2, keepdim=True)
    a = torch.cat([a0, raw.apc], dim=2)
    return DecoderOutput(s_sdw=s_sdw, s_obj=s_obj, o=raw.order, zeta=zeta, pi=pi, b=b, a=a)


# --- likelihood -------------------------------------------------------------

def gaussian_log_const(C: int, sigma_x: float) -> float:
    """log of the normaliser of N(., sigma_x^2 I) in C dimensions."""
    return -0.5 * C * math.log(2.0 * math.pi * sigma_x ** 2)


def log_likelihood(x: torch.Tensor, pi: torch.Tensor, a: torch.Tensor, sigma_x: float,
                   check: bool = True) -> torch.Tensor:
    """Per-pixel log of sum_k pi_k N(x; a_k, sigma_x^2 I).

    x [..., M, N, C], pi [..., M, K+1, N], a [..., M, K+1, N, C] -> [..., M, N].
    """
    if check:
        total = pi.detach().sum(dim=-2)
        total = total[torch.isfinite(total)]   # NaNs surface through the loss instead
        assert torch.allclose(total, torch.ones_like(total), atol=1e-4), \
            "pi must sum to one over layers"
    sq = ((x.unsqueeze(-3) - a) ** 2).sum(dim=-1) / (2.0 * sigma_x ** 2)
    logits = torch.log(pi.clamp_min(LOG_FLOOR)) - sq
    return torch.logsumexp(logits, dim=-2) + gaussian_log_const(x.shape[-1], sigma_x)


# --- ancestral sampling -----------------------------------------------------

def sample_prior(cfg: ModelConfig, M: int, generator: torch.Generator | None = None,
                 batch: int = 1) -> LatentSample:
    """Draw every latent from the prior; z_prs is hard {0, 1}."""
    def randn(*shape):
        return torch.randn(*shape, generator=generator)

    conc = torch.full((batch, cfg.K), cfg.alpha / cfg.K)
    g1 = torch._standard_gamma(conc, generator=generator)
    g2 = torch._standard_gamma(torch.ones_like(conc), generator=generator)
    rho = g1 / (g1 + g2)
    z_prs = (torch.rand(batch, cfg.K, generator=generator) < rho).float()
    return LatentSample(
        z_view=randn(batch, M, cfg.E_view),
        z_bck=randn(batch, cfg.E_bck),
        z_obj=randn(batch, cfg.K, cfg.E_obj),
        rho=rho,
        z_prs=z_prs,
        temperature="hard",
    )


@torch.no_grad()
def sample_scene(decoder: Decoder, M: int, generator: torch.Generator | None = None,
                 batch: int = 1) -> tuple[LatentSample, DecoderOutput, torch.Tensor]:
    """Ancestral sample: latents from the prior, decoded, then pixels drawn
    from the per-pixel mixture.  Returns (latent, decoder output, x [B, M, N, C])."""
    cfg = decoder.cfg
    latent = sample_prior(cfg, M, generator, batch)
    out = decoder(latent, mode="exact")
    pi = out.pi.movedim(-2, -1)  # [B, M, N, K+1]
    u = torch.rand(pi.shape[:-1] + (1,), generator=generator)
    layer = (pi.cumsum(-1) < u).sum(-1).clamp_max(cfg.K)  # [B, M, N]
    a = out.a.movedim(2, -2)  # [B, M, N, K+1, C]
    mean = torch.gather(a, -2, layer[..., None, None].expand(*layer.shape, 1, cfg.C)).squeeze(-2)
    x = mean + cfg.sigma_x * torch.randn(mean.shape, generator=generator)
    out.log_px = log_likelihood(x, out.pi, out.a, cfg.sigma_x)
    return latent, out, x
