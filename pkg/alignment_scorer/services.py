import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np
from django.conf import settings

from .metrics import PredictionSet
from .network import AlignmentScorer
from .optim import ParamSet
from .records import PairRecord

logger = logging.getLogger(__name__)


class InferenceService:
    """
    Scores records with a fixed parameter set, fanning fixed-size chunks out
    over a thread pool. Chunks are cut from the id-sorted records, so the
    output does not depend on the worker count.
    """

    def __init__(self, scorer: AlignmentScorer, params: ParamSet, workers: int = None, chunk_size: int = 16):
        self.scorer = scorer
        self.weights = params.as_tensors(track=False)
        self.workers = workers or getattr(settings, 'ALIGNSCORE_INFERENCE_WORKERS', 1)
        self.chunk_size = chunk_size

    def _score_chunk(self, chunk: Sequence[PairRecord]) -> List[float]:
        encode = self.scorer.tokenizer.encode
        pooled = np.stack([self.scorer.pooled_features(r.audio_ref) for r in chunk])
        scores = self.scorer.score_batch(self.weights, [encode(r.caption) for r in chunk], pooled)
        return [float(s) for s in scores.data]

    def predict(self, records: Sequence[PairRecord]) -> PredictionSet:
        ordered = sorted(records, key=lambda r: r.id)
        chunks = [ordered[i:i + self.chunk_size] for i in range(0, len(ordered), self.chunk_size)]
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self._score_chunk, chunks))
        else:
            results = [self._score_chunk(chunk) for chunk in chunks]
        scores = [s for chunk_scores in results for s in chunk_scores]
        logger.debug(f"Scored {len(ordered)} records in {len(chunks)} chunks with {self.workers} workers")
        return PredictionSet.from_pairs(zip((r.id for r in ordered), scores))
