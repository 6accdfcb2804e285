"""2D sparse parallelism for embedding-heavy recommendation training, simulated on one host."""

from sparse2d.collectives import BandwidthModel, Topology
from sparse2d.data import FeatureSpec, gen_batch
from sparse2d.optimizer import OptimizerConfig
from sparse2d.trainer import DataConfig, TrainRunConfig, make_trainer

__all__ = ["BandwidthModel", "DataConfig", "FeatureSpec", "OptimizerConfig", "Topology",
           "TrainRunConfig", "gen_batch", "make_trainer"]
