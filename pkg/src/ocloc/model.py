"""The full model: encoder + decoder + loss in one module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .decoder import Decoder, DecoderOutput, LatentSample, Mode, log_likelihood
from .encoder import Encoder, VariationalParams
from .loss import LossBreakdown, posterior_mode, sample_latents, total_loss


@dataclass
class ForwardResult:
    params: VariationalParams
    latent: LatentSample
    out: DecoderOutput
    loss: LossBreakdown


INIT_GAIN = 2.0
OUTPUT_GAIN = 0.1
POS_GAIN = 0.1


def _fan_in(m: nn.Module) -> float:
    if isinstance(m, nn.Linear):
        return m.in_features
    kh, kw = m.kernel_size
    if isinstance(m, nn.ConvTranspose2d):
        # each output pixel of a strided transposed conv sees kh*kw/stride^2 taps per channel
        return m.in_channels * kh * kw / (m.stride[0] * m.stride[1])
    return m.in_channels * kh * kw


def init_weights(model: "OCLOC") -> None:
    """Variance-preserving normal init for every affine layer, with small
    output layers so latents and images start near their means, and a weak
    encoder position embedding so image content dominates the features."""
    for m in model.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, std=INIT_GAIN / math.sqrt(_fan_in(m)))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    enc, dec = model.encoder, model.decoder
    for m in (dec.obj_net.convs[-1], dec.bck_net.convs[-1], dec.ord_net[-1],
              enc.view_head[-1], enc.obj_head[-1], enc.bck_head[-1], enc.bck_slot[-1]):
        m.weight.data.mul_(OUTPUT_GAIN / INIT_GAIN)
    enc.feat.pos.weight.data.mul_(POS_GAIN)


class OCLOC(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        init_weights(self)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None,
                temperature: float | str = 1.0, mode: Mode = "straight_through") -> ForwardResult:
        """x [B, M, N, C]: infer q, draw one joint sample, decode, score."""
        params = self.encoder(x, generator)
        latent = sample_latents(params, generator, temperature)
        out = self.decoder(latent, mode=mode)
        loss = total_loss(x, params, out, self.cfg)
        return ForwardResult(params, latent, out, loss)

    @torch.no_grad()
    def decompose(self, x: torch.Tensor, generator: torch.Generator | None = None,
                  ) -> tuple[VariationalParams, LatentSample, DecoderOutput]:
        """Deterministic decomposition: posterior means and hard presence."""
        params = self.encoder(x, generator)
        latent = posterior_mode(params)
        out = self.decoder(latent, mode="exact")
        out.log_px = log_likelihood(x, out.pi, out.a, self.cfg.sigma_x)
        return params, latent, out
