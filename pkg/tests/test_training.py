import numpy as np
import pytest

from app.core.errors import TrainingError
from app.core.tensor import mse, no_grad, Tensor
from app.models.run_config import TrainConfig
from app.services.denoiser_service import Denoiser
from app.services.diffusion_service import make_schedule, q_sample
from app.services.scene_service import generate_scene, image_to_array, sample_spec
from app.services.tokenizer_service import tokenize
from app.services.training_service import TrainingExample, TrainingService


@pytest.fixture
def dataset(vocab, tiny_config):
    examples = []
    for seed in range(8):
        scene = generate_scene(sample_spec(seed, image_size=tiny_config.image_size))
        tokens = tokenize(scene.p_src, vocab, tiny_config.token_budget)
        examples.append(TrainingExample(image=image_to_array(scene.image), tokens=tokens))
    return examples


def fixed_eval_loss(net, schedule, dataset):
    rng = np.random.default_rng(77)
    total = 0.0
    with no_grad():
        for example in dataset[:4]:
            for t in (10, 50, 90):
                eps = rng.standard_normal(example.image.shape).astype(np.float32)
                x_t = q_sample(example.image, t, eps, schedule).astype(np.float32)
                total += mse(net(x_t, t, example.tokens), Tensor(eps)).item()
    return total / 12


def test_loss_decreases(tiny_config, schedule, dataset):
    net = Denoiser(tiny_config, seed=0)
    before = fixed_eval_loss(net, schedule, dataset)
    trainer = TrainingService(net, schedule, TrainConfig(epochs=20, batch_size=4, lr=1e-2), seed=0)
    stats = trainer.train(dataset)
    after = fixed_eval_loss(net, schedule, dataset)
    assert after < before
    assert stats.steps == 20 * 2
    assert len(stats.epoch_losses) == 20
    assert stats.final_loss == stats.epoch_losses[-1]


def test_no_dropout_never_uses_null_prompt(tiny_config, schedule, dataset):
    trainer = TrainingService(Denoiser(tiny_config), schedule, TrainConfig(batch_size=4, cfg_drop_rate=0.0))
    stats = trainer.train(dataset, epochs=1)
    assert stats.null_prompts == 0
    assert stats.word_prompts == len(dataset)


def test_full_dropout_always_uses_null_prompt(tiny_config, schedule, dataset):
    trainer = TrainingService(Denoiser(tiny_config), schedule, TrainConfig(batch_size=3, cfg_drop_rate=1.0))
    stats = trainer.train(dataset, epochs=2)
    assert stats.word_prompts == 0
    assert stats.null_prompts == 2 * len(dataset)
    assert stats.steps == 2 * 3


def test_training_is_deterministic(tiny_config, schedule, dataset):
    states = []
    for _ in range(2):
        net = Denoiser(tiny_config, seed=4)
        TrainingService(net, schedule, TrainConfig(batch_size=4, lr=1e-3), seed=9).train(dataset, epochs=1)
        states.append(net.state())
    for name in states[0]:
        assert np.array_equal(states[0][name], states[1][name])


def test_empty_dataset(tiny_config, schedule):
    with pytest.raises(TrainingError):
        TrainingService(Denoiser(tiny_config), schedule, TrainConfig()).train([])


def test_schedule_mismatch(tiny_config):
    with pytest.raises(TrainingError):
        TrainingService(Denoiser(tiny_config), make_schedule(50), TrainConfig())
