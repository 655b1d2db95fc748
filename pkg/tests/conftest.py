import numpy as np
import pytest
import torch

from ocloc.config import ModelConfig, TrainConfig
from ocloc.data import GeneratorSpec, generate_dataset


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(K=2, E_view=2, E_bck=3, E_obj=4, T=2, D_ft=8, D_vw=4, D_at=8, D_key=8,
                enc_channels=8, mlp_hidden=16, bck_width=8, obj_width=8, bck_heads=2,
                obj_heads=2, dec_upsample=2, image_height=8, image_width=8)
    base.update(kw)
    return ModelConfig(**base)


def tiny_train_config(**kw) -> TrainConfig:
    base = dict(batch_size=2, total_steps=6, warmup_single_view_steps=2, lr_decay_steps=3,
                temperature_anneal_steps=4, checkpoint_interval=3, M_train_range=(1, 3))
    base.update(kw)
    return TrainConfig(**base)


def tiny_spec(**kw) -> GeneratorSpec:
    base = dict(image_height=8, image_width=8, object_count_range=(1, 2), M_range=(3, 3),
                min_separation=0.0)
    base.update(kw)
    return GeneratorSpec(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()


@pytest.fixture
def tiny_scenes():
    return generate_dataset(tiny_spec(), 4, 100)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
