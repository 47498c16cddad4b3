"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"


class ModelInfo(BaseModel):
    loaded: bool
    rows: int = 0
    dim: int = 0
    num_classes: int = 0
    shots: int = 0
    class_names: Optional[List[str]] = None


class LoadRequest(BaseModel):
    cache_path: str
    classifier_path: str
    class_names: Optional[List[str]] = None


class BuildRequest(BaseModel):
    features: List[List[float]]
    labels: List[int]
    num_classes: int = Field(ge=1)
    classifier: List[List[float]]
    class_names: Optional[List[str]] = None


class PredictRequest(BaseModel):
    query: List[float]
    alpha: float = 1.0
    beta: float = 5.5


class PredictResponse(BaseModel):
    logits: List[float]
    predicted_class: int
    class_name: Optional[str] = None


class BatchPredictRequest(BaseModel):
    queries: List[List[float]]
    alpha: float = 1.0
    beta: float = 5.5


class BatchPredictResponse(BaseModel):
    scores: List[List[float]]
    predicted_classes: List[int]


class EvaluateRequest(BaseModel):
    manifest_path: str
    alpha: float = 1.0
    beta: float = 5.5


class EvaluateResponse(BaseModel):
    accuracy: float
    samples: int


class EpochEntry(BaseModel):
    epoch: int
    loss: float
    accuracy: float


class FineTuneRequest(BaseModel):
    manifest_path: str
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    alpha: float = 1.0
    beta: float = 5.5
    out_path: Optional[str] = None


class FineTuneResponse(BaseModel):
    epochs: List[EpochEntry]
    key_checksum: str
    model: ModelInfo


class SearchRequest(BaseModel):
    manifest_path: str
    alphas: List[float]
    betas: List[float]


class SearchCell(BaseModel):
    alpha: float
    beta: float
    accuracy: float


class SearchResponse(BaseModel):
    best_alpha: float
    best_beta: float
    best_accuracy: float
    cells: List[SearchCell]


class ReduceRequest(BaseModel):
    size: int = Field(ge=1)
    seed: int = 0
    out_path: Optional[str] = None
    replace: bool = False


class EnsembleRequest(BaseModel):
    paths: List[str]
    out_path: str


class EnsembleResponse(BaseModel):
    rows: int
    cols: int
