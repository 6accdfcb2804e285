import pytest
from hypothesis import HealthCheck, settings

from sparse2d.collectives import Topology
from sparse2d.data import FeatureSpec
from sparse2d.model import ModelConfig
from sparse2d.optimizer import OptimizerConfig
from sparse2d.trainer import DataConfig, TrainRunConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DESK_SPECS = (FeatureSpec(0, 1000, 1.05, 2), FeatureSpec(1, 1000, 1.05, 2))


def desk_config(M=1, T=8, steps=100, seed=0, eval_samples=2000, **kw):
    """Two-table toy model small enough for unit tests."""
    opt = kw.pop("optimizer", OptimizerConfig(eta=0.05))
    specs = kw.pop("specs", DESK_SPECS)
    return TrainRunConfig(
        topology=Topology(T, M),
        data=DataConfig(seed=seed, specs=specs, eval_samples=eval_samples),
        model=ModelConfig(dim=8, dense_hidden=16, over_hidden=16),
        optimizer=opt, steps=steps, eval_every=kw.pop("eval_every", 50), **kw)


@pytest.fixture
def desk():
    return desk_config
