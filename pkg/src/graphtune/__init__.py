"""Tunable graph generation with a DFS-code sequence CVAE."""

from .graph import Graph, from_edge_list, induced_subgraph, is_connected, degree
from .dfscode import (
    FiveTuple,
    Vocabulary,
    decode,
    dfs_code_compare,
    encode_min_dfs,
    repair_decode,
    to_one_hot,
)

__version__ = "0.1.0"

__all__ = [
    "FiveTuple",
    "Graph",
    "Vocabulary",
    "decode",
    "degree",
    "dfs_code_compare",
    "encode_min_dfs",
    "from_edge_list",
    "induced_subgraph",
    "is_connected",
    "repair_decode",
    "to_one_hot",
]
