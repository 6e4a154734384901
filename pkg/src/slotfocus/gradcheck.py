"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import seeding
from .model import Mechanism, ModelConfig, Seq2SeqTagger


def relative_error(analytic, numeric) -> np.ndarray:
    """|g - g'| / max(1, |g|, |g'|), elementwise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        up = f()
        x[idx] = orig - eps
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad


@dataclass
class GradCheckResult:
    max_error: float
    per_tensor: dict[str, float]

    def worst(self) -> str:
        return max(self.per_tensor, key=self.per_tensor.get)


def check_gradients(loss_fn: Callable[[], ad.Tensor], tensors: dict[str, ad.Tensor],
                    eps: float = 1e-5) -> GradCheckResult:
    """Compare backward() gradients of ``loss_fn`` with finite differences.

    ``loss_fn`` must be deterministic (freeze any dropout masks).
    """
    if ad.default_dtype() is not np.float64:
        raise RuntimeError("gradient checks need float64 arithmetic")
    for t in tensors.values():
        t.zero_grad()
    ad.backward(loss_fn())
    analytic = {k: t.grad.copy() for k, t in tensors.items()}

    def value() -> float:
        with ad.no_grad():
            return loss_fn().item()

    per_tensor = {}
    for name, t in tensors.items():
        numeric = numeric_gradient(value, t.data, eps)
        per_tensor[name] = float(relative_error(analytic[name], numeric).max())
        t.zero_grad()
    return GradCheckResult(max(per_tensor.values()), per_tensor)


def gradcheck_config(mechanism=Mechanism.FOCUS, n_labels: int = 4, hidden: int = 4,
                     emb_dim: int = 3, vocab_size: int = 7) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, n_tags=n_labels + 1, emb_dim=emb_dim,
                       hidden=hidden, label_dim=emb_dim, mechanism=mechanism)


def check_model(mechanism, seed: int = 0, length: int = 5, hidden: int = 4,
                emb_dim: int = 3, n_labels: int = 4, dropout_p: float = 0.5,
                init_range: float = 0.2) -> GradCheckResult:
    """End-to-end check of the sequence loss on a random tiny instance."""
    from .training import init_params, sequence_loss

    mechanism = Mechanism.parse(mechanism)
    config = gradcheck_config(mechanism, n_labels, hidden, emb_dim)
    model: Seq2SeqTagger = init_params(config, seed, init_range)
    rng = seeding.stream(seed, "gradcheck")
    tokens = [int(x) for x in rng.integers(0, config.vocab_size, size=length)]
    tags = [int(x) for x in rng.integers(1, config.n_tags, size=length)]

    def loss():
        masks = seeding.stream(seed, seeding.DROPOUT)
        return sequence_loss(model, mechanism, tokens, tags, dropout_p, masks)

    return check_gradients(loss, model.params)
