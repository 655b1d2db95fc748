import pytest
import torch

from ocloc.model import OCLOC
from ocloc.viewpoints import interpolate_viewpoints, sample_viewpoints
from conftest import tiny_model_config


@pytest.fixture
def model():
    torch.manual_seed(0)
    return OCLOC(tiny_model_config()).eval()


def test_interpolation_frames(model):
    x = torch.rand(3, model.cfg.N, 3)
    latents, outs = interpolate_viewpoints(model, x, 6, torch.Generator().manual_seed(0))
    assert len(outs) == 6
    for lat, out in zip(latents, outs):
        assert torch.allclose(out.pi.sum(2), torch.ones(1, 1, model.cfg.N), atol=1e-5)
        for name in ("z_obj", "z_bck", "z_prs", "rho"):
            assert torch.equal(getattr(lat, name), getattr(latents[0], name))
    params = model.encoder(x[None], torch.Generator().manual_seed(0))
    assert torch.equal(latents[0].z_view[:, 0], params.mu_view[:, 0])
    assert torch.equal(latents[-1].z_view[:, 0], params.mu_view[:, 1])


def test_interpolation_requires_two_views(model):
    with pytest.raises(ValueError):
        interpolate_viewpoints(model, torch.rand(1, model.cfg.N, 3), 4)
    with pytest.raises(ValueError):
        interpolate_viewpoints(model, torch.rand(2, model.cfg.N, 3), 1)


def test_sampled_viewpoints(model):
    x = torch.rand(2, model.cfg.N, 3)
    latents, outs = sample_viewpoints(model, x, 3, torch.Generator().manual_seed(1))
    assert len(outs) == 3
    assert not torch.equal(latents[0].z_view, latents[1].z_view)
    assert torch.equal(latents[0].z_obj, latents[2].z_obj)
