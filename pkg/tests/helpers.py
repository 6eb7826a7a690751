"""Shared verification utilities for model-level tests."""

import numpy as np

from metaseq import tensor_core as tc
from metaseq.tagger_model import MetaphorTagger, ModelConfig


def micro_model_and_batch(seed=0):
    """The small gradient-check configuration: unified dim 8, 2 kernels per
    window, hidden 4, two sentences."""
    rng = np.random.default_rng(seed)
    config = ModelConfig(unified_dim=8, static_dim=5, kernels_per_window=2,
                         hidden_size=4, input_dropout=0.0, hidden_dropout=0.0,
                         seed=seed)
    model = MetaphorTagger(config)
    batch = []
    for n in (5, 7):
        channels = {"G": rng.normal(size=(n, 5)),
                    "E": rng.normal(size=(n, 8)),
                    "B": rng.normal(size=(n, 8))}
        labels = rng.integers(0, 2, size=n)
        batch.append((channels, labels))
    return model, batch


def batch_loss_value(model, batch) -> float:
    rng = tc.RngStream(0)
    total = 0.0
    for channels, labels in batch:
        stack = model.build_stack(channels)
        total += float(model.sentence_loss(stack, labels, rng, training=False).data)
    return total


def analytic_batch_grads(model, batch) -> dict[str, np.ndarray]:
    params = model.parameters()
    tc.zero_grads(params.values())
    rng = tc.RngStream(0)
    with tc.Tape() as tape:
        parts = []
        for channels, labels in batch:
            stack = model.build_stack(channels)
            parts.append(model.sentence_loss(stack, labels, rng, training=False))
        loss = parts[0]
        for part in parts[1:]:
            loss = tc.add(loss, part)
    tc.backward(loss, tape, params.values())
    grads = {name: p.grad.copy() for name, p in params.items()}
    tc.zero_grads(params.values())
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def micro_gradcheck(param_names=None, h=1e-6, seed=0) -> float:
    """Max relative error between tape and finite-difference gradients of the
    summed two-sentence loss, over the named parameters (default: all)."""
    model, batch = micro_model_and_batch(seed)
    analytic = analytic_batch_grads(model, batch)
    names = sorted(analytic) if param_names is None else list(param_names)
    tensors = [model.parameters()[name] for name in names]
    numeric = tc.fd_gradient(lambda: batch_loss_value(model, batch), tensors, h=h)
    return max(max_relative_error(analytic[name], num)
               for name, num in zip(names, numeric))
