"""Amortised inference: iterative cross-attention over all views.

Per-view slots ``r_view`` [B, M, D_vw] and per-object slots ``r_attr``
[B, K, D_at] start from learned Gaussians.  Each iteration pairs every view
slot with every object slot, lets the pair attend to that view's features,
updates the pair with a GRU + residual MLP, and then averages the pair
updates back: the view part over objects, the object part over views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .decoder import mlp

SIGMA_FLOOR = 1e-4
TAU_FLOOR = 1e-2
KAPPA_EPS = 1e-4
ATTN_EPS = 1e-12


@dataclass
class VariationalParams:
    mu_view: torch.Tensor     # [B, M, E_view]
    sigma_view: torch.Tensor  # [B, M, E_view]
    mu_bck: torch.Tensor      # [B, E_bck]
    sigma_bck: torch.Tensor   # [B, E_bck]
    mu_obj: torch.Tensor      # [B, K, E_obj]
    sigma_obj: torch.Tensor   # [B, K, E_obj]
    tau: torch.Tensor         # [B, K, 2]
    kappa: torch.Tensor       # [B, K]

    def map(self, fn) -> "VariationalParams":
        return VariationalParams(**{f.name: fn(getattr(self, f.name)) for f in fields(self)})


def _positive(x: torch.Tensor, floor: float) -> torch.Tensor:
    return F.softplus(x) + floor


def feature_coords(height: int, width: int) -> torch.Tensor:
    ys = torch.linspace(0.0, 1.0, height)
    xs = torch.linspace(0.0, 1.0, width)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx, yy], dim=-1).reshape(-1, 2)


class FeatureExtractor(nn.Module):
    """Strided conv stack, additive linear position embedding, LayerNorm + MLP head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.enc_channels
        layers: list[nn.Module] = [nn.Conv2d(cfg.C, ch, 4, stride=2, padding=1), nn.SiLU()]
        for _ in range(4):
            layers += [nn.Conv2d(ch, ch, 5, padding=2), nn.SiLU()]
        self.convs = nn.Sequential(*layers)
        self.pos = nn.Linear(2, ch)
        self.register_buffer("coords", feature_coords(cfg.image_height // 2, cfg.image_width // 2),
                             persistent=False)
        self.head = nn.Sequential(nn.LayerNorm(ch), nn.Linear(ch, cfg.D_ft), nn.SiLU(),
                                  nn.Linear(cfg.D_ft, cfg.D_ft))
        self.cfg = cfg

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x [B, M, N, C] -> r_feat [B, M, N', D_ft]."""
        cfg = self.cfg
        B, M, N, C = x.shape
        if N != cfg.N or C != cfg.C:
            raise ValueError(f"expected images with N={cfg.N}, C={cfg.C}; got N={N}, C={C}")
        img = x.reshape(B * M, cfg.image_height, cfg.image_width, C).permute(0, 3, 1, 2)
        h = self.convs(2.0 * img - 1.0).flatten(2).transpose(1, 2)
        h = h + self.pos(self.coords)
        return self.head(h).reshape(B, M, -1, cfg.D_ft)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.feat = FeatureExtractor(cfg)
        self.key = nn.Sequential(nn.LayerNorm(cfg.D_ft), nn.Linear(cfg.D_ft, cfg.D_key, bias=False))
        self.val = nn.Sequential(nn.LayerNorm(cfg.D_ft), nn.Linear(cfg.D_ft, cfg.D_val, bias=False))
        self.qry = nn.Sequential(nn.LayerNorm(cfg.D_val), nn.Linear(cfg.D_val, cfg.D_key, bias=False))
        self.gru = nn.GRUCell(cfg.D_val, cfg.D_val)
        self.res = nn.Sequential(nn.LayerNorm(cfg.D_val), nn.Linear(cfg.D_val, cfg.mlp_hidden),
                                 nn.SiLU(), nn.Linear(cfg.mlp_hidden, cfg.D_val))
        self.init_mu_view = nn.Parameter(torch.zeros(cfg.D_vw))
        self.init_log_sigma_view = nn.Parameter(torch.zeros(cfg.D_vw))
        self.init_mu_attr = nn.Parameter(torch.zeros(cfg.D_at))
        self.init_log_sigma_attr = nn.Parameter(torch.zeros(cfg.D_at))
        nn.init.normal_(self.init_mu_view, std=0.1)
        nn.init.normal_(self.init_mu_attr, std=0.1)

        H = cfg.mlp_hidden
        self.view_head = mlp([cfg.D_vw, H, H, 2 * cfg.E_view])
        self.obj_head = mlp([cfg.D_at, H, H, 2 * cfg.E_obj + 3])
        self.bck_slot = mlp([cfg.D_at, H, H + 1])
        self.bck_head = mlp([H, H, H, 2 * cfg.E_bck])

    # -- Algorithm pieces --------------------------------------------------

    def init_noise(self, batch: int, M: int, generator: torch.Generator | None = None,
                   ) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        return (torch.randn(batch, M, cfg.D_vw, generator=generator),
                torch.randn(batch, cfg.K, cfg.D_at, generator=generator))

    def init_state(self, M: int, batch: int = 1, generator: torch.Generator | None = None,
                   noise: tuple[torch.Tensor, torch.Tensor] | None = None,
                   ) -> tuple[torch.Tensor, torch.Tensor]:
        """Draw r_view [B, M, D_vw] and r_attr [B, K, D_at] from the learned Gaussians."""
        if noise is None:
            noise = self.init_noise(batch, M, generator)
        eps_view, eps_attr = (n.to(self.init_mu_view.dtype) for n in noise)
        r_view = self.init_mu_view + self.init_log_sigma_view.exp() * eps_view
        r_attr = self.init_mu_attr + self.init_log_sigma_attr.exp() * eps_attr
        return r_view, r_attr

    def attention_weights(self, keys: torch.Tensor, r_full: torch.Tensor,
                          ) -> tuple[torch.Tensor, torch.Tensor]:
        """keys [B, M, N', D_key], r_full [B, M, K, D_val] ->
        (w normalised over slots, location weights normalised over N'), both [B, M, K, N']."""
        q = self.qry(r_full)
        logits = torch.einsum("bmkd,bmnd->bmkn", q, keys) / math.sqrt(self.cfg.D_key)
        w = logits.softmax(dim=2)
        loc = torch.log(w + ATTN_EPS).softmax(dim=-1)
        return w, loc

    def attention_step(self, keys: torch.Tensor, values: torch.Tensor, r_view: torch.Tensor,
                       r_attr: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        B, M, _ = r_view.shape
        K = r_attr.shape[1]
        r_full = torch.cat([r_view[:, :, None].expand(B, M, K, -1),
                            r_attr[:, None].expand(B, M, K, -1)], dim=-1)
        _, loc = self.attention_weights(keys, r_full)
        u = torch.einsum("bmkn,bmnd->bmkd", loc, values)
        h = self.gru(u.reshape(-1, cfg.D_val), r_full.reshape(-1, cfg.D_val))
        v = (h + self.res(h)).reshape(B, M, K, cfg.D_val)
        return v[..., :cfg.D_vw].mean(dim=2), v[..., cfg.D_vw:].mean(dim=1)

    def readout(self, r_view: torch.Tensor, r_attr: torch.Tensor) -> VariationalParams:
        cfg = self.cfg
        view = self.view_head(r_view)
        obj = self.obj_head(r_attr)
        slot = self.bck_slot(r_attr)
        weight = slot[..., -1:].softmax(dim=1)
        bck = self.bck_head((weight * slot[..., :-1]).sum(dim=1))
        E = cfg.E_obj
        return VariationalParams(
            mu_view=view[..., :cfg.E_view],
            sigma_view=_positive(view[..., cfg.E_view:], SIGMA_FLOOR),
            mu_bck=bck[..., :cfg.E_bck],
            sigma_bck=_positive(bck[..., cfg.E_bck:], SIGMA_FLOOR),
            mu_obj=obj[..., :E],
            sigma_obj=_positive(obj[..., E:2 * E], SIGMA_FLOOR),
            tau=_positive(obj[..., 2 * E:2 * E + 2], TAU_FLOOR),
            kappa=KAPPA_EPS + (1.0 - 2.0 * KAPPA_EPS) * torch.sigmoid(obj[..., 2 * E + 2]),
        )

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None,
                noise: tuple[torch.Tensor, torch.Tensor] | None = None) -> VariationalParams:
        """x [B, M, N, C] -> variational parameters."""
        if x.dim() != 4:
            raise ValueError(f"expected x of shape [B, M, N, C], got {tuple(x.shape)}")
        B, M = x.shape[:2]
        if M < 1:
            raise ValueError("at least one view (M >= 1) is required")
        feat = self.feat(x)
        keys, values = self.key(feat), self.val(feat)
        r_view, r_attr = self.init_state(M, B, generator, noise)
        for _ in range(self.cfg.T):
            r_view, r_attr = self.attention_step(keys, values, r_view, r_attr)
        return self.readout(r_view, r_attr)
