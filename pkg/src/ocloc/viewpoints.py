"""Re-rendering a scene from new viewpoints: infer once, then edit only z_view."""

from __future__ import annotations

import torch

from .decoder import DecoderOutput, LatentSample
from .loss import posterior_mode
from .model import OCLOC


def _with_views(latent: LatentSample, z_view: torch.Tensor) -> LatentSample:
    return LatentSample(z_view=z_view, z_bck=latent.z_bck, z_obj=latent.z_obj,
                        rho=latent.rho, z_prs=latent.z_prs, temperature=latent.temperature)


@torch.no_grad()
def interpolate_viewpoints(model: OCLOC, x: torch.Tensor, steps: int,
                           generator: torch.Generator | None = None, views: tuple[int, int] = (0, 1),
                           ) -> tuple[list[LatentSample], list[DecoderOutput]]:
    """Linearly interpolate between the inferred mu_view of two views of one scene.

    x [M, N, C] with M >= 2.  Frame i uses t = i / (steps - 1); object,
    background and presence latents are shared by every frame.
    """
    if x.dim() != 3 or x.shape[0] < 2:
        raise ValueError("interpolation needs one scene with at least two views")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    params = model.encoder(x[None], generator)
    base = posterior_mode(params)
    start, end = params.mu_view[:, views[0]], params.mu_view[:, views[1]]
    latents, outputs = [], []
    for i in range(steps):
        t = i / (steps - 1)
        z = start + t * (end - start) if 0 < i < steps - 1 else (start if i == 0 else end)
        latent = _with_views(base, z[:, None])
        latents.append(latent)
        outputs.append(model.decoder(latent, mode="exact"))
    return latents, outputs


@torch.no_grad()
def sample_viewpoints(model: OCLOC, x: torch.Tensor, num: int,
                      generator: torch.Generator | None = None,
                      ) -> tuple[list[LatentSample], list[DecoderOutput]]:
    """Keep the inferred scene, draw ``num`` viewpoints from the N(0, I) prior."""
    params = model.encoder(x[None], generator)
    base = posterior_mode(params)
    latents, outputs = [], []
    for _ in range(num):
        z = torch.randn(1, 1, model.cfg.E_view, generator=generator).to(base.z_obj.dtype)
        latent = _with_views(base, z)
        latents.append(latent)
        outputs.append(model.decoder(latent, mode="exact"))
    return latents, outputs
