import numpy as np
import pytest
import torch

from scenegan.discriminator import Discriminator, DiscriminatorConfig
from scenegan.generator import CompositionalGenerator, GeneratorConfig

# keep the suite deterministic and fast on small CPUs
torch.set_num_threads(max(torch.get_num_threads(), 2))


def make_generator(cfg: GeneratorConfig, seed: int = 0) -> CompositionalGenerator:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return CompositionalGenerator(cfg)


def make_discriminator(cfg: DiscriminatorConfig, seed: int = 0) -> Discriminator:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Discriminator(cfg)


@pytest.fixture
def tiny_gen_cfg():
    return GeneratorConfig(
        num_classes=3, latent_dim=8, style_dim=8, coarse_resolution=4,
        output_resolution=8, fourier_features=8, local_width=8,
        renderer_channels=(8, 8),
    )


@pytest.fixture
def tiny_generator(tiny_gen_cfg):
    return make_generator(tiny_gen_cfg, seed=0)


@pytest.fixture
def tiny_disc_cfg():
    return DiscriminatorConfig(
        resolution=8, mask_channels=3, stem_width=8, stage_widths=(16,),
    )


@pytest.fixture
def tiny_discriminator(tiny_disc_cfg):
    return make_discriminator(tiny_disc_cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
