"""Block-sparse recurrent networks with local spatial, temporal and structural credit assignment."""

from .blocksparse import BlockLayout, BlockSparseMatrix
from .dynamics import DynamicsParams, NetworkState
from .learning import PlasticityRates
from .network import LearningSwitches, Network, NetworkConfig
from .structure import StructuralPolicy, TrophicFieldMap

__version__ = "0.1.0"

__all__ = [
    "BlockLayout", "BlockSparseMatrix", "DynamicsParams", "NetworkState", "PlasticityRates",
    "LearningSwitches", "Network", "NetworkConfig", "StructuralPolicy", "TrophicFieldMap",
]
