"""Construction-year estimation over precomputed CLIP-style embeddings.

Coarse style-period similarities plus reason-prompt similarities feed an
ordinal regressor; GPS enters through an RFF location encoder behind a
zero-initialized linear map.
"""

from .config import TrainConfig
from .embed_io import EmbeddingMatrix, l2_normalize, read_embeddings, write_embeddings
from .evaluation import EvalReport, evaluate, stratified_split
from .model import ModelParams, PromptSet, forward_batch, init_params, predict
from .records import DEFAULT_PERIODS, ROOF_BANK, BuildingRecord, ReasonBank, period_of_year

__version__ = "0.1.0"

__all__ = [
    "BuildingRecord",
    "DEFAULT_PERIODS",
    "EmbeddingMatrix",
    "EvalReport",
    "ModelParams",
    "PromptSet",
    "ROOF_BANK",
    "ReasonBank",
    "TrainConfig",
    "evaluate",
    "forward_batch",
    "init_params",
    "l2_normalize",
    "period_of_year",
    "predict",
    "read_embeddings",
    "stratified_split",
    "write_embeddings",
]
