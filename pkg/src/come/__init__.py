"""Joint node embedding, community detection and community embedding."""
from .graph import Graph, load_edge_list, read_edge_list, build_negative_sampler
from .trainer import TrainConfig, ComEModel, train, preset

__all__ = ["Graph", "load_edge_list", "read_edge_list", "build_negative_sampler",
           "TrainConfig", "ComEModel", "train", "preset"]
__version__ = "0.1.0"
