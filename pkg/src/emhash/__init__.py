"""External-memory hash tables over an IO-counting block store."""
from .store import IOStats, Store, StoreConfig, StoreError
from .fingerprint import CharCodec, HashFamily, make_family
from .bucketed_run import BucketedRun, SkewError
from .routing import RefinedRoutingFilter, StructureError
from .funnel import funnel_merge, partial_funnelsort
from .table import CapacityError
from .stlsm import StLsm
from .boa import Boa
from .bot import BudgetError, Bot, Cobot
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Boa",
    "Bot",
    "BucketedRun",
    "BudgetError",
    "CapacityError",
    "CharCodec",
    "Cobot",
    "HashFamily",
    "IOStats",
    "RefinedRoutingFilter",
    "SkewError",
    "StLsm",
    "Store",
    "StoreConfig",
    "StoreError",
    "StructureError",
    "funnel_merge",
    "make_family",
    "partial_funnelsort",
]
