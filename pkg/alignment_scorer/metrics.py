"""
Evaluation math: average-tie ranks, Spearman correlation, rank-average
ensembling, the caption cosine-similarity evaluator, and the PredictionSet
TSV format.
"""
import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from .exceptions import DegenerateError, DuplicateIdError, EnsembleError, ManifestError, ShapeError
from .rng import make_rng

logger = logging.getLogger(__name__)

PREDICTION_HEADER = ('id', 'score')


@dataclass(frozen=True)
class ScoreList:
    ids: tuple
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateIdError('score list ids must be unique')
        if len(self.ids) != len(self.values):
            raise ShapeError(f'{len(self.ids)} ids for {len(self.values)} scores')
        if not np.all(np.isfinite(self.values)):
            raise ShapeError('score list contains non-finite values')

    def __len__(self):
        return len(self.ids)


@dataclass
class PredictionSet:
    """
    Mapping from example id to predicted score; iteration and files are in
    sorted id order
    """
    scores: Dict[str, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, item_id: str) -> float:
        return self.scores[item_id]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.scores

    @property
    def ids(self) -> List[str]:
        return sorted(self.scores)

    def values(self, ids: Sequence[str] = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.array([self.scores[i] for i in ids], dtype=np.float64)

    def to_score_list(self, ids: Sequence[str] = None) -> ScoreList:
        ids = tuple(self.ids if ids is None else ids)
        return ScoreList(ids=ids, values=self.values(ids))

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> 'PredictionSet':
        scores = {}
        for item_id, score in pairs:
            if item_id in scores:
                raise DuplicateIdError(f'duplicate id {item_id!r}')
            scores[item_id] = float(score)
        return cls(scores)


RankVector = np.ndarray


def _values(values) -> np.ndarray:
    if isinstance(values, ScoreList):
        return np.asarray(values.values, dtype=np.float64)
    return np.asarray(values, dtype=np.float64)


def rank_transform(values: Union[ScoreList, Sequence[float]]) -> RankVector:
    """
    Ascending 1-based ranks; ties share the mean of the positions they occupy
    """
    values = _values(values)
    n = values.shape[0]
    if n == 0:
        return np.zeros(0)
    order = np.argsort(values, kind='mergesort')
    ordered = values[order]
    cuts = np.flatnonzero(ordered[1:] != ordered[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [n]])
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def srcc(a: Union[ScoreList, Sequence[float]], b: Union[ScoreList, Sequence[float]]) -> float:
    """
    Spearman correlation: Pearson correlation of the average-tie rank vectors
    """
    if isinstance(a, ScoreList) and isinstance(b, ScoreList) and a.ids != b.ids:
        if set(a.ids) != set(b.ids):
            raise ShapeError('score lists cover different ids')
        lookup = dict(zip(b.ids, b.values))
        b = [lookup[i] for i in a.ids]
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape or va.ndim != 1:
        raise ShapeError(f'cannot correlate lists of shapes {va.shape} and {vb.shape}')
    if va.shape[0] < 2:
        raise DegenerateError('SRCC needs at least 2 items')
    centre = (va.shape[0] + 1) / 2.0
    da = rank_transform(va) - centre
    db = rank_transform(vb) - centre
    sa, sb = float(np.dot(da, da)), float(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise DegenerateError('SRCC is undefined for a constant list')
    return float(min(1.0, max(-1.0, float(np.dot(da, db)) / math.sqrt(sa * sb))))


def prediction_srcc(predictions: PredictionSet, labels: PredictionSet) -> float:
    """
    SRCC between two prediction sets over the ids of `predictions`
    """
    missing = [i for i in predictions.ids if i not in labels]
    if missing:
        raise ManifestError(f'{len(missing)} predicted ids have no label, e.g. {missing[0]!r}')
    ids = predictions.ids
    return srcc(predictions.values(ids), labels.values(ids))


def rank_average_ensemble(members: Sequence[PredictionSet], out_lo: float = 0.0,
                          out_hi: float = 1.0) -> PredictionSet:
    """
    Mean of the members' average-tie ranks per id, mapped affinely so the
    lowest mean rank lands on `out_lo` and the highest on `out_hi`
    """
    if not members:
        raise EnsembleError('ensemble needs at least one member')
    if not out_lo < out_hi:
        raise EnsembleError(f'output range [{out_lo}, {out_hi}] is empty')
    ids = members[0].ids
    for position, member in enumerate(members[1:], start=2):
        if member.ids != ids:
            raise EnsembleError(f'member {position} does not cover the same ids as member 1')
    mean_ranks = sum(rank_transform(m.values(ids)) for m in members) / len(members)
    low, high = float(mean_ranks.min()), float(mean_ranks.max())
    if high == low:
        scaled = np.full(len(ids), (out_lo + out_hi) / 2.0)
    else:
        scaled = out_lo + (mean_ranks - low) / (high - low) * (out_hi - out_lo)
    return PredictionSet(dict(zip(ids, (float(v) for v in scaled))))


class TrigramEmbedder:
    """
    Text embedding for caption evaluation: byte-trigram counts, each trigram
    mapped to a fixed Gaussian vector from the stream (seed, 'trigram',
    trigram hex), summed and unit-normalised. Texts shorter than three
    bytes count as a single gram.
    """

    def __init__(self, seed: int = 7, dim: int = 64):
        self.seed = seed
        self.dim = dim
        self._vectors: Dict[bytes, np.ndarray] = {}

    def _vector(self, gram: bytes) -> np.ndarray:
        if gram not in self._vectors:
            self._vectors[gram] = make_rng(self.seed, 'trigram', gram.hex()).standard_normal(self.dim)
        return self._vectors[gram]

    def __call__(self, text: Union[str, bytes, Sequence[int]]) -> np.ndarray:
        data = _as_bytes(text)
        if not data:
            return np.zeros(self.dim)
        grams = [data] if len(data) < 3 else [data[i:i + 3] for i in range(len(data) - 2)]
        total = np.zeros(self.dim)
        for gram, count in sorted(Counter(grams).items()):
            total += count * self._vector(gram)
        norm = np.linalg.norm(total)
        return total / norm if norm > 0 else total


def _as_bytes(text) -> bytes:
    if isinstance(text, bytes):
        return text
    if isinstance(text, str):
        return text.encode('utf-8')
    return bytes(int(t) for t in text if 0 <= int(t) < 256)


def caption_similarity_score(generated, reference, embedder) -> float:
    """
    Cosine similarity of the two caption embeddings; 0 when either caption is empty
    """
    if not _as_bytes(generated) or not _as_bytes(reference):
        return 0.0
    u, v = embedder(generated), embedder(reference)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def write_predictions(predictions: PredictionSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, delimiter='\t', lineterminator='\n')
        writer.writerow(PREDICTION_HEADER)
        for item_id in predictions.ids:
            writer.writerow((item_id, repr(float(predictions[item_id]))))
    return path


def read_predictions(path) -> PredictionSet:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f'prediction file not found: {path}')
    scores = {}
    with path.open('r', encoding='utf-8', newline='') as handle:
        rows = csv.reader(handle, delimiter='\t')
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header[:2]) != PREDICTION_HEADER:
            raise ManifestError(f'{path}: expected header "id<TAB>score"', line=1)
        for line, row in enumerate(rows, start=2):
            if not row or not ''.join(row).strip():
                continue
            if len(row) < 2:
                raise ManifestError(f'{path}: expected id and score', line=line)
            item_id = row[0]
            try:
                score = float(row[1])
            except ValueError:
                raise ManifestError(f'{path}: score {row[1]!r} is not a number', line=line)
            if not math.isfinite(score):
                raise ManifestError(f'{path}: score for {item_id!r} is not finite', line=line)
            if item_id in scores:
                raise DuplicateIdError(f'{path}: duplicate id {item_id!r}', line=line)
            scores[item_id] = score
    return PredictionSet(scores)
