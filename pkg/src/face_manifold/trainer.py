"""Mini-batch Adam training of the denoising autoencoder."""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .autoencoder import denoise_batch, init_weights, loss_and_gradients
from .dataset import SHAPE_NORMALIZATION
from .morphable_model import Group
from .tensor_nn import AdamState, adam_step


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.001
    batch_size: int = 128
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)


def _check_dataset(name, dataset, spec):
    if len(dataset) == 0:
        raise ValueError(f"{name} set is empty")
    if dataset.param_count != spec.input_length:
        raise ValueError(
            f"{name} set has {dataset.param_count} parameters, network expects {spec.input_length}"
        )
    if dataset.group is Group.IDENTITY and dataset.normalization != SHAPE_NORMALIZATION:
        raise ValueError(
            f"{name} set is an unnormalized shape dataset; normalize_shape() it first"
        )


def evaluate_mse(weights, dataset, threads=1):
    """``(output_mse, input_mse)`` averaged over pairs, in the dataset's units."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    out = denoise_batch(weights, dataset.noisy, threads=threads)
    # fsum makes the mean exactly independent of pair order
    per_out = np.mean((out - dataset.clean) ** 2, axis=1)
    per_in = np.mean((dataset.noisy - dataset.clean) ** 2, axis=1)
    n = len(dataset)
    return math.fsum(per_out) / n, math.fsum(per_in) / n


def train(spec, train_set, test_set, config=TrainConfig(), threads=1, log=None):
    """Fit weights on ``train_set``; losses on both sets are recorded after every epoch."""
    _check_dataset("train", train_set, spec)
    _check_dataset("test", test_set, spec)
    weights = init_weights(spec, derive_rng(config.seed, "init"))
    params = weights.parameters()
    state = AdamState.zeros_like(params, learning_rate=config.learning_rate)
    history = TrainHistory()
    n = len(train_set)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        if config.shuffle:
            order = derive_rng(config.seed, "shuffle", epoch).permutation(n)
        else:
            order = np.arange(n)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            rows = order[lo : lo + config.batch_size]
            loss, grads = loss_and_gradients(
                weights, train_set.noisy[rows], train_set.clean[rows], threads=threads
            )
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(
                    f"non-finite loss/gradient at epoch {epoch + 1}, batch {b + 1}"
                )
            params, state = adam_step(params, grads, state)
            weights = weights.with_parameters(params)
        train_loss = evaluate_mse(weights, train_set, threads)[0]
        test_loss = evaluate_mse(weights, test_set, threads)[0]
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
            raise TrainingDiverged(f"non-finite epoch loss after epoch {epoch + 1}")
        history.train_loss.append(train_loss)
        history.test_loss.append(test_loss)
        history.epoch_seconds.append(time.perf_counter() - start)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}: train {train_loss:.5g}, "
                f"test {test_loss:.5g} ({history.epoch_seconds[-1]:.1f}s)")
    return weights, history
