import numpy as np
import pytest

from app.models.denoiser import DenoiserConfig
from app.models.scene import ShapeClass
from app.services.denoiser_service import Denoiser
from app.services.diffusion_service import make_schedule
from app.services.edit_service import EditService
from app.services.scene_service import generate_scene, image_to_array, sample_spec
from app.services.tokenizer_service import default_vocabulary


TINY_T = 100


@pytest.fixture
def tiny_config():
    return DenoiserConfig(
        image_size=8, channels=3, d_model=16, n_layers=2, n_heads=2,
        token_budget=4, vocab_size=32, T_train=TINY_T,
    )


@pytest.fixture
def vocab():
    return default_vocabulary()


@pytest.fixture
def model(tiny_config):
    return Denoiser(tiny_config, seed=0).requires_grad_(False)


@pytest.fixture
def schedule():
    return make_schedule(TINY_T)


@pytest.fixture
def editor(model, schedule, vocab):
    return EditService(model, schedule, vocab)


@pytest.fixture
def circle_scene():
    return generate_scene(sample_spec(11, image_size=8, shape=ShapeClass.CIRCLE))


@pytest.fixture
def circle_latent(circle_scene):
    return image_to_array(circle_scene.image)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
