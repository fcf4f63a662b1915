"""
Service for training the denoiser with the noise-prediction objective
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import structlog
from tqdm import tqdm

from app.core.errors import NumericError, TrainingError
from app.core.tensor import Adam, Tensor, add, backward, default_dtype, make_rng, mse, scale
from app.models.diffusion import NoiseSchedule
from app.models.prompt import TokenizedPrompt
from app.models.run_config import TrainConfig
from app.services.denoiser_service import Denoiser
from app.services.diffusion_service import q_sample
from app.services.tokenizer_service import null_prompt

logger = structlog.get_logger()


@dataclass
class TrainingExample:
    image: np.ndarray
    tokens: TokenizedPrompt


@dataclass
class TrainingStats:
    epoch_losses: List[float] = field(default_factory=list)
    steps: int = 0
    null_prompts: int = 0
    word_prompts: int = 0

    @property
    def final_loss(self) -> Optional[float]:
        return self.epoch_losses[-1] if self.epoch_losses else None


class TrainingService:
    """Minimizes MSE between predicted and true noise over q_sample-noised images"""

    def __init__(self, model: Denoiser, schedule: NoiseSchedule, config: TrainConfig,
                 seed: int = 0, progress: bool = False):
        if model.config.T_train != schedule.T_train:
            raise TrainingError("model and schedule disagree on T_train")
        self.model = model
        self.schedule = schedule
        self.config = config
        self.rng = make_rng(seed)
        self.progress = progress
        self.optimizer = Adam(
            list(model.parameters().values()),
            lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        )
        self._null = null_prompt(model.config.token_budget)

    def _sample_loss(self, example: TrainingExample, stats: TrainingStats) -> Tensor:
        tokens = example.tokens
        if self.rng.random() < self.config.cfg_drop_rate:
            tokens = self._null
            stats.null_prompts += 1
        elif tokens.word_positions:
            stats.word_prompts += 1
        t = int(self.rng.integers(1, self.schedule.T_train + 1))
        eps = self.rng.standard_normal(example.image.shape).astype(default_dtype())
        x0 = example.image.astype(default_dtype())
        x_t = q_sample(x0, t, eps, self.schedule).astype(default_dtype())
        pred = self.model.forward_eps(x_t, t, tokens)
        return mse(pred, Tensor(eps))

    def train_step(self, batch: Sequence[TrainingExample], stats: TrainingStats) -> float:
        """One optimizer update on a batch; gradients are accumulated in batch order"""
        self.optimizer.zero_grad()
        total = None
        for example in batch:
            loss = self._sample_loss(example, stats)
            total = loss if total is None else add(total, loss)
        total = scale(total, 1.0 / len(batch))
        value = total.item()
        if not np.isfinite(value):
            raise TrainingError(f"loss diverged at step {stats.steps}")
        backward(total, self.optimizer.params)
        self.optimizer.step()
        stats.steps += 1
        return value

    def train(self, dataset: Sequence[TrainingExample], epochs: Optional[int] = None) -> TrainingStats:
        """
        Train for a number of epochs

        Args:
            dataset: images in model space with their tokenized prompts
            epochs: overrides the configured epoch count

        Returns:
            TrainingStats: per-epoch mean loss and prompt counters
        """
        if not dataset:
            raise TrainingError("training dataset is empty")
        epochs = epochs if epochs is not None else self.config.epochs
        stats = TrainingStats()
        batch_size = self.config.batch_size
        bar = tqdm(range(epochs), desc="train", disable=not self.progress)
        for epoch in bar:
            order = self.rng.permutation(len(dataset))
            losses = []
            for start in range(0, len(order), batch_size):
                batch = [dataset[i] for i in order[start:start + batch_size]]
                try:
                    losses.append(self.train_step(batch, stats))
                except NumericError as exc:
                    raise TrainingError(f"training diverged in epoch {epoch + 1}: {exc}") from exc
            epoch_loss = float(np.mean(losses))
            stats.epoch_losses.append(epoch_loss)
            bar.set_postfix(loss=f"{epoch_loss:.4f}")
            logger.info("Epoch finished", epoch=epoch + 1, loss=round(epoch_loss, 6), steps=stats.steps)
        logger.info("Training finished", epochs=epochs, null_prompts=stats.null_prompts,
                    word_prompts=stats.word_prompts)
        return stats
