"""Tiny configurations shared by the slower integration tests."""

import dataclasses

from opendg.config import ExperimentConfig, ModelConfig


def tiny_config(**train) -> ExperimentConfig:
    cfg = ExperimentConfig(seeds=[0], model=ModelConfig(width=4, embed_dim=8))
    cfg = cfg.replace(data=dataclasses.replace(cfg.data, n_per_class=2, image_size=32))
    kw = dict(epochs=1, batch_size=16)
    kw.update(train)
    return cfg.with_train(**kw)
