"""FastAPI service wrapping the core package for long-running inference.

A single model slot (cache + zero-shot classifier) is loaded from disk or
built from an inline payload, then served to any number of clients. Run
with:

    uvicorn fewcache.service.app:app
"""

from __future__ import annotations

import threading
from typing import List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.requests import Request
from fastapi.responses import JSONResponse

from ..core import (
    CacheModel,
    FeatureMatrix,
    Hyperparams,
    build_cache,
    l2_normalize_rows,
    predict,
    predict_batch,
)
from ..datastore import (
    read_cache,
    read_features,
    read_manifest,
    write_cache,
    write_features,
)
from ..errors import FewcacheError
from ..finetune import FineTuneConfig, fine_tune
from ..search import SearchGrid, grid_search, reduce_cache
from . import schemas


class ModelStore:
    """Thread-safe slot holding the active cache, classifier and class names."""

    def __init__(self):
        self._lock = threading.Lock()
        self.cache: Optional[CacheModel] = None
        self.classifier: Optional[FeatureMatrix] = None
        self.class_names: Optional[Tuple[str, ...]] = None

    def set(self, cache, classifier, class_names=None):
        with self._lock:
            self.cache = cache
            self.classifier = classifier
            if class_names is not None:
                self.class_names = tuple(class_names)
            elif self.class_names is None or len(self.class_names) != cache.num_classes:
                self.class_names = None

    def require(self) -> Tuple[CacheModel, FeatureMatrix]:
        with self._lock:
            if self.cache is None or self.classifier is None:
                raise HTTPException(status_code=409, detail="no model loaded")
            return self.cache, self.classifier

    def info(self) -> schemas.ModelInfo:
        with self._lock:
            if self.cache is None:
                return schemas.ModelInfo(loaded=False)
            return schemas.ModelInfo(
                loaded=True,
                rows=self.cache.size,
                dim=self.cache.dim,
                num_classes=self.cache.num_classes,
                shots=self.cache.shots,
                class_names=list(self.class_names) if self.class_names else None,
            )


def _feature_row(values: List[float], dim_name: str) -> FeatureMatrix:
    arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
    if arr.size == 0:
        raise HTTPException(status_code=400, detail=f"{dim_name} must be non-empty")
    return FeatureMatrix(arr, normalized=False)


def create_app() -> FastAPI:
    app = FastAPI(
        title="fewcache",
        description="Few-shot cache-model classifier over precomputed embeddings",
    )
    store = ModelStore()
    app.state.store = store

    @app.exception_handler(FewcacheError)
    async def data_error_handler(request: Request, exc: FewcacheError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(OSError)
    async def os_error_handler(request: Request, exc: OSError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        # config-level rejections (negative alpha, bad epoch counts, ...)
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.Health)
    def health():
        return schemas.Health()

    @app.get("/model", response_model=schemas.ModelInfo)
    def model_info():
        return store.info()

    @app.post("/model/load", response_model=schemas.ModelInfo)
    def model_load(req: schemas.LoadRequest):
        cache = read_cache(req.cache_path)
        classifier = read_features(req.classifier_path)
        store.set(cache, classifier, req.class_names)
        return store.info()

    @app.post("/model/build", response_model=schemas.ModelInfo)
    def model_build(req: schemas.BuildRequest):
        feats = FeatureMatrix(np.asarray(req.features, dtype=np.float64))
        cache = build_cache(feats, req.labels, req.num_classes)
        classifier = FeatureMatrix(np.asarray(req.classifier, dtype=np.float64))
        store.set(cache, classifier, req.class_names)
        return store.info()

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict_one(req: schemas.PredictRequest):
        cache, classifier = store.require()
        query = _feature_row(req.query, "query")
        hp = Hyperparams(alpha=req.alpha, beta=req.beta)
        logits = predict(query, cache, classifier, hp)
        winner = int(np.argmax(logits))
        names = store.class_names
        return schemas.PredictResponse(
            logits=logits.tolist(),
            predicted_class=winner,
            class_name=names[winner] if names else None,
        )

    @app.post("/predict/batch", response_model=schemas.BatchPredictResponse)
    def predict_many(req: schemas.BatchPredictRequest):
        cache, classifier = store.require()
        arr = np.asarray(req.queries, dtype=np.float64)
        if arr.ndim != 2:
            raise HTTPException(status_code=400, detail="queries must be MxC")
        queries = FeatureMatrix(arr, normalized=False)
        hp = Hyperparams(alpha=req.alpha, beta=req.beta)
        scores = predict_batch(queries, cache, classifier, hp)
        return schemas.BatchPredictResponse(
            scores=scores.tolist(),
            predicted_classes=np.argmax(scores, axis=1).tolist() if scores.size else [],
        )

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        cache, classifier = store.require()
        feats, labels, _ = read_manifest(req.manifest_path).load()
        hp = Hyperparams(alpha=req.alpha, beta=req.beta)
        scores = predict_batch(feats, cache, classifier, hp)
        accuracy = float(np.mean(np.argmax(scores, axis=1) == labels))
        return schemas.EvaluateResponse(accuracy=accuracy, samples=feats.rows)

    @app.post("/finetune", response_model=schemas.FineTuneResponse)
    def finetune_keys(req: schemas.FineTuneRequest):
        cache, classifier = store.require()
        feats, labels, _ = read_manifest(req.manifest_path).load()
        cfg = FineTuneConfig(
            epochs=req.epochs,
            batch_size=req.batch_size,
            learning_rate=req.learning_rate,
            weight_decay=req.weight_decay,
            seed=req.seed,
        )
        hp = Hyperparams(alpha=req.alpha, beta=req.beta)
        tuned, log = fine_tune(cache, (feats, labels), classifier, hp, cfg)
        if req.out_path:
            write_cache(tuned, req.out_path)
        store.set(tuned, classifier)
        return schemas.FineTuneResponse(
            epochs=[
                schemas.EpochEntry(epoch=e.epoch, loss=e.loss, accuracy=e.accuracy)
                for e in log.epochs
            ],
            key_checksum=log.key_checksum,
            model=store.info(),
        )

    @app.post("/search", response_model=schemas.SearchResponse)
    def search(req: schemas.SearchRequest):
        cache, classifier = store.require()
        feats, labels, _ = read_manifest(req.manifest_path).load()
        grid = SearchGrid(alphas=tuple(req.alphas), betas=tuple(req.betas))
        result = grid_search(cache, classifier, (feats, labels), grid)
        cells = [
            schemas.SearchCell(alpha=a, beta=b, accuracy=float(result.table[i, j]))
            for i, a in enumerate(result.alphas)
            for j, b in enumerate(result.betas)
        ]
        return schemas.SearchResponse(
            best_alpha=result.best_alpha,
            best_beta=result.best_beta,
            best_accuracy=result.best_accuracy,
            cells=cells,
        )

    @app.post("/reduce", response_model=schemas.ModelInfo)
    def reduce(req: schemas.ReduceRequest):
        cache, classifier = store.require()
        reduced = reduce_cache(cache, req.size, req.seed)
        if req.out_path:
            write_cache(reduced, req.out_path)
        if req.replace:
            store.set(reduced, classifier)
        return schemas.ModelInfo(
            loaded=True,
            rows=reduced.size,
            dim=reduced.dim,
            num_classes=reduced.num_classes,
            shots=reduced.shots,
        )

    @app.post("/ensemble", response_model=schemas.EnsembleResponse)
    def ensemble(req: schemas.EnsembleRequest):
        if not req.paths:
            raise HTTPException(status_code=400, detail="paths must be non-empty")
        blocks = [read_features(p) for p in req.paths]
        shape = (blocks[0].rows, blocks[0].cols)
        for path, block in zip(req.paths, blocks):
            if (block.rows, block.cols) != shape:
                raise HTTPException(
                    status_code=400,
                    detail=f"template shape mismatch at {path}",
                )
        mean = np.mean([b.data for b in blocks], axis=0)
        classifier = FeatureMatrix(l2_normalize_rows(mean), normalized=True)
        write_features(classifier, req.out_path)
        return schemas.EnsembleResponse(rows=classifier.rows, cols=classifier.cols)

    return app


app = create_app()
