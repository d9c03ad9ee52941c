"""
Pseudo-label teachers and the synthetic corpus they label.

A planted teacher scores a pair as logistic(u^T W v): u is the latent of
the clip (derived from its synthetic id), v the mean latent of the words in
the caption. An external teacher is a PredictionSet file keyed by record id.
"""
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .audio import FEATURE_SUFFIX, synthetic_latent
from .augment import negative_sample_augment
from .exceptions import ConfigError, TeacherCoverageError
from .metrics import PredictionSet, read_predictions
from .records import PairRecord, write_manifest
from .rng import make_rng

logger = logging.getLogger(__name__)

SOUND_WORDS = (
    'applause', 'bark', 'bell', 'bird', 'car', 'chirp', 'clock', 'crowd',
    'dog', 'door', 'engine', 'footsteps', 'guitar', 'horn', 'music', 'piano',
    'rain', 'siren', 'speech', 'splash', 'thunder', 'train', 'water', 'wind',
)
WORDS_PER_CAPTION = 3
_WORD = re.compile(r'[a-z]+')


class TeacherSpec(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    kind: Literal['planted_bilinear', 'external_file']
    seed: Optional[int] = None
    latent_dim: Optional[int] = None
    world_seed: int = 0
    weight: Optional[List[List[float]]] = None
    squashing: Literal['logistic'] = 'logistic'
    path: Optional[str] = None

    @model_validator(mode='after')
    def check_kind(self):
        if self.kind == 'planted_bilinear':
            if self.latent_dim is None or self.weight is None:
                raise ValueError('a planted teacher needs latent_dim and weight')
            matrix = np.asarray(self.weight, dtype=np.float64)
            if matrix.shape != (self.latent_dim, self.latent_dim):
                raise ValueError(f'weight must be {self.latent_dim}x{self.latent_dim}, got {matrix.shape}')
            if not np.all(np.isfinite(matrix)):
                raise ValueError('weight must be finite')
        elif not self.path:
            raise ValueError('an external teacher needs a path')
        return self

    @property
    def weight_matrix(self) -> np.ndarray:
        return np.asarray(self.weight, dtype=np.float64)


def planted_teacher(seed: int, latent_dim: int = 8, world_seed: int = 0, gain: float = 1.0,
                    noise: float = 0.25) -> TeacherSpec:
    """
    W = gain * I + noise * G with G standard normal from (seed, 'teacher-weight')
    """
    jitter = make_rng(seed, 'teacher-weight').standard_normal((latent_dim, latent_dim))
    weight = gain * np.eye(latent_dim) + noise * jitter
    return TeacherSpec(kind='planted_bilinear', seed=seed, latent_dim=latent_dim,
                       world_seed=world_seed, weight=weight.tolist())


def save_teacher(spec: TeacherSpec, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(spec.model_dump_json(indent=2), encoding='utf-8')
    return path


def load_teacher(path) -> TeacherSpec:
    """
    A JSON teacher description, or any other file as an external score file
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'teacher not found: {path}')
    if path.suffix != '.json':
        return TeacherSpec(kind='external_file', path=str(path))
    try:
        return TeacherSpec(**json.loads(path.read_text(encoding='utf-8')))
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise ConfigError(f'invalid teacher {path}: {e}') from e


def word_vector(world_seed: int, word: str, dim: int) -> np.ndarray:
    vector = make_rng(world_seed, 'word', word).standard_normal(dim)
    return vector / np.linalg.norm(vector)


def caption_words(caption: str) -> List[str]:
    return _WORD.findall(caption.lower())


def text_latent(caption: str, world_seed: int, dim: int) -> np.ndarray:
    """
    Mean word vector of the caption; zeros for a caption without words
    """
    words = caption_words(caption)
    if not words:
        return np.zeros(dim)
    return np.mean([word_vector(world_seed, w, dim) for w in words], axis=0)


def audio_latent(audio_ref: str, dim: int) -> np.ndarray:
    if audio_ref.endswith(FEATURE_SUFFIX):
        raise TeacherCoverageError(f'planted teacher cannot score feature file {audio_ref!r}')
    return synthetic_latent(audio_ref, dim)


def synthetic_caption(audio_ref: str, world_seed: int, dim: int) -> str:
    """
    The sound words best aligned with the clip latent, best first
    """
    latent = synthetic_latent(audio_ref, dim)
    scores = np.array([word_vector(world_seed, w, dim) @ latent for w in SOUND_WORDS])
    top = np.argsort(-scores, kind='stable')[:WORDS_PER_CAPTION]
    return ', '.join(SOUND_WORDS[i] for i in top)


def _logistic(x: float) -> float:
    return float(0.5 * (np.tanh(0.5 * x) + 1.0))


def pseudo_label(records: Sequence[PairRecord], teacher: TeacherSpec,
                 audio_embed: Callable[[str], np.ndarray] = None,
                 text_embed: Callable[[str], np.ndarray] = None) -> List[PairRecord]:
    """
    Records relabelled by the teacher. The embed functions default to the
    synthetic latents of the teacher's world.
    """
    if teacher.kind == 'external_file':
        scores = read_predictions(teacher.path)
        missing = [r.id for r in records if r.id not in scores]
        if missing:
            raise TeacherCoverageError(f'{teacher.path} has no score for {len(missing)} records, '
                                       f'e.g. {missing[0]!r}')
        return [r.with_label(scores[r.id]) for r in records]
    dim = teacher.latent_dim
    audio_embed = audio_embed or (lambda ref: audio_latent(ref, dim))
    text_embed = text_embed or (lambda caption: text_latent(caption, teacher.world_seed, dim))
    weight = teacher.weight_matrix
    audio_cache: Dict[str, np.ndarray] = {}
    labelled = []
    for record in records:
        if record.audio_ref not in audio_cache:
            audio_cache[record.audio_ref] = audio_embed(record.audio_ref)
        u = audio_cache[record.audio_ref]
        v = text_embed(record.caption)
        labelled.append(record.with_label(_logistic(float(u @ weight @ v))))
    return labelled


def teacher_predictions(records: Sequence[PairRecord], teacher: TeacherSpec) -> PredictionSet:
    return PredictionSet({r.id: r.label for r in pseudo_label(records, teacher)})


def human_labels(records: Sequence[PairRecord], teacher: TeacherSpec, seed: int,
                 sigma: float = 0.05) -> List[PairRecord]:
    """
    Human-style ratings: teacher score squared plus N(0, sigma) noise drawn
    from the per-record stream (seed, 'human-label', id)
    """
    out = []
    for record in pseudo_label(records, teacher):
        noise = sigma * make_rng(seed, 'human-label', record.id).standard_normal()
        out.append(record.with_label(record.label ** 2 + float(noise)))
    return out


def matched_records(prefix: str, seed: int, start: int, count: int, world_seed: int,
                    dim: int) -> List[PairRecord]:
    records = []
    for i in range(start, start + count):
        audio_ref = f's{seed}-{i:06d}'
        records.append(PairRecord(id=f'{prefix}-{i:06d}', audio_ref=audio_ref,
                                  caption=synthetic_caption(audio_ref, world_seed, dim)))
    return records


@dataclass
class SyntheticCorpus:
    teacher: TeacherSpec
    splits: Dict[str, List[PairRecord]] = field(default_factory=dict)

    def write(self, out_dir) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        paths = {'teacher': save_teacher(self.teacher, out_dir / 'teacher.json')}
        for name, records in self.splits.items():
            paths[name] = write_manifest(records, out_dir / f'{name}.tsv')
        return paths


def generate_synthetic_corpus(n: int, seed: int, teacher_seed: int, latent_dim: int = 8,
                              negatives_per_positive: int = 3, world_seed: int = 0) -> SyntheticCorpus:
    """
    Splits:
      pretrain        n matched pairs, unlabelled (stage 1; stage 2 adds
                      negatives and teacher labels)
      heldout         fresh clips plus negatives, teacher-labelled
      finetune_*      fresh clips plus negatives with human-style labels
    """
    if n < 2:
        raise ConfigError('a synthetic corpus needs at least 2 pairs')
    teacher = planted_teacher(teacher_seed, latent_dim, world_seed)
    k = negatives_per_positive
    sizes = {
        'heldout': ('held', max(n // 5, 4)),
        'finetune_train': ('ft-train', max(n // 4, 4)),
        'finetune_valid': ('ft-valid', max(n // 8, 4)),
        'finetune_test': ('ft-test', max(n // 8, 4)),
    }
    splits = {'pretrain': matched_records('pre', seed, 0, n, world_seed, latent_dim)}
    start = n
    for name, (prefix, size) in sizes.items():
        matched = matched_records(prefix, seed, start, size, world_seed, latent_dim)
        start += size
        augmented = negative_sample_augment(matched, k, seed + start)
        if name == 'heldout':
            splits[name] = pseudo_label(augmented, teacher)
        else:
            splits[name] = human_labels(augmented, teacher, seed)
    logger.info(f'Synthetic corpus: {", ".join(f"{name}={len(v)}" for name, v in splits.items())}')
    return SyntheticCorpus(teacher=teacher, splits=splits)
