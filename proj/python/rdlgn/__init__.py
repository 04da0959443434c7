"""Recurrent differentiable logic gate networks (C++ core)."""

from ._core import (
    CollapsedModel,
    ConfigError,
    DataError,
    Model,
    ShapeError,
    accounting,
    base_preset,
    corpus_bleu,
    discrete_eval,
    eval_layer,
    gate_name,
    gradcheck,
    group_sum,
    hard_group_scores,
    make_shift_sample,
    relaxed_eval,
    tiny_config,
    tokenize,
    train,
)

__all__ = [
    "CollapsedModel",
    "ConfigError",
    "DataError",
    "Model",
    "ShapeError",
    "accounting",
    "base_preset",
    "corpus_bleu",
    "discrete_eval",
    "eval_layer",
    "gate_name",
    "gradcheck",
    "group_sum",
    "hard_group_scores",
    "make_shift_sample",
    "relaxed_eval",
    "tiny_config",
    "tokenize",
    "train",
]
