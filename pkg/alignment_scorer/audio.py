"""
Frozen audio feature provider and temporal pooling.

The pretrained encoder is replaced by a deterministic stand-in: a synthetic
audio id resolves to a latent vector derived from the id alone, which a
seeded random projection maps to `enc_dim` channels at `enc_rate` frames per
second. Feature files on disk are loaded verbatim instead.
"""
import logging
import re
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .exceptions import MissingAudioError, PoolError, ShapeError
from .rng import make_rng

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = '.afeat'
FEATURE_MAGIC = b'AFEAT'
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct('<5sHIIf')
_SYNTHETIC_ID = re.compile(r'^[A-Za-z0-9][A-Za-z0-9_\-:]*$')


@dataclass(frozen=True)
class AudioFeatureSeq:
    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ShapeError(f'audio features must be T x channels, got {self.frames.shape}')
        if not np.all(np.isfinite(self.frames)):
            raise ShapeError('audio features contain non-finite values')

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]


def write_feature_file(path, feat: AudioFeatureSeq) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, feat.num_frames, feat.channels,
                                  float(feat.frame_rate))
    path.write_bytes(header + np.ascontiguousarray(feat.frames, dtype='<f4').tobytes())
    return path


def read_feature_file(path) -> AudioFeatureSeq:
    path = Path(path)
    if not path.is_file():
        raise MissingAudioError(f'feature file not found: {path}')
    blob = path.read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise MissingAudioError(f'feature file is truncated: {path}')
    magic, version, frames, channels, rate = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC or version != FEATURE_VERSION:
        raise MissingAudioError(f'not a version-{FEATURE_VERSION} feature file: {path}')
    body = np.frombuffer(blob, dtype='<f4', offset=_FEATURE_HEADER.size)
    if body.size != frames * channels:
        raise ShapeError(f'{path}: header says {frames}x{channels}, payload has {body.size} values')
    return AudioFeatureSeq(frames=body.reshape(frames, channels).astype(np.float64), frame_rate=rate)


def synthetic_latent(audio_ref: str, latent_dim: int) -> np.ndarray:
    """
    Latent vector of a synthetic clip; depends on the id only
    """
    return make_rng(0, 'audio-latent', audio_ref).standard_normal(latent_dim)


def encoder_projection(cfg: ModelConfig, seed: int) -> np.ndarray:
    """
    latent_dim x enc_dim projection of the stand-in encoder
    """
    rng = make_rng(seed, 'encoder-projection', cfg.latent_dim, cfg.enc_dim)
    return rng.standard_normal((cfg.latent_dim, cfg.enc_dim)) / np.sqrt(cfg.latent_dim)


class FrozenAudioEncoder:
    """
    Resolves audio refs to feature sequences. Feature files (`*.afeat`) are
    read relative to `data_root`; other ids are synthetic.

    Synthetic draw order, from the stream (seed, 'frames', ref): one uniform
    modulation frequency in [0.5, 3), one uniform phase in [0, 2*pi), then a
    T x enc_dim block of standard normals scaled by 0.05.

    The most recent `cache_size` clips stay in memory.
    """

    def __init__(self, cfg: ModelConfig, projection: np.ndarray = None, seed: int = None,
                 data_root=None, cache_size: int = 256):
        self.cfg = cfg
        self.seed = cfg.encoder_seed if seed is None else seed
        self.projection = encoder_projection(cfg, self.seed) if projection is None else np.asarray(projection)
        if self.projection.shape != (cfg.latent_dim, cfg.enc_dim):
            raise ShapeError(f'encoder projection {self.projection.shape} does not match config')
        self.data_root = Path(data_root) if data_root is not None else None
        self.cache_size = cache_size
        self._cache = OrderedDict()
        self._lock = threading.Lock()

    def encode(self, audio_ref: str) -> AudioFeatureSeq:
        with self._lock:
            cached = self._cache.get(audio_ref)
            if cached is not None:
                self._cache.move_to_end(audio_ref)
        if cached is not None:
            return cached
        if audio_ref.endswith(FEATURE_SUFFIX):
            feat = self._load(audio_ref)
        elif _SYNTHETIC_ID.match(audio_ref or ''):
            feat = self._synthesize(audio_ref)
        else:
            raise MissingAudioError(f'cannot resolve audio ref {audio_ref!r}')
        with self._lock:
            self._cache[audio_ref] = feat
            self._cache.move_to_end(audio_ref)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return feat

    def _load(self, audio_ref: str) -> AudioFeatureSeq:
        path = Path(audio_ref)
        if not path.is_absolute() and self.data_root is not None:
            path = self.data_root / path
        feat = read_feature_file(path)
        if feat.channels != self.cfg.enc_dim:
            raise ShapeError(f'{path} has {feat.channels} channels, encoder emits {self.cfg.enc_dim}')
        return feat

    def _synthesize(self, audio_ref: str) -> AudioFeatureSeq:
        cfg = self.cfg
        frames = cfg.clip_frames
        base = synthetic_latent(audio_ref, cfg.latent_dim) @ self.projection
        rng = make_rng(self.seed, 'frames', audio_ref)
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        noise = 0.05 * rng.standard_normal((frames, cfg.enc_dim))
        t = np.arange(frames) / max(frames, 1)
        envelope = 1.0 + 0.25 * np.sin(2.0 * np.pi * freq * t + phase)
        return AudioFeatureSeq(frames=envelope[:, None] * base[None, :] + noise, frame_rate=cfg.enc_rate)


def encode_audio(audio_ref: str, cfg: ModelConfig, seed: int, data_root=None) -> AudioFeatureSeq:
    return FrozenAudioEncoder(cfg, seed=seed, data_root=data_root).encode(audio_ref)


def pool_group_sizes(num_frames: int, target: int) -> list:
    """
    Contiguous, as-equal-as-possible groups; earlier groups take the remainder
    """
    if target < 1 or target > num_frames:
        raise PoolError(f'cannot pool {num_frames} frames into {target} groups')
    base, remainder = divmod(num_frames, target)
    return [base + 1 if i < remainder else base for i in range(target)]


def temporal_average_pool(feat: AudioFeatureSeq, target: int) -> np.ndarray:
    frames = feat.frames if isinstance(feat, AudioFeatureSeq) else np.asarray(feat)
    sizes = pool_group_sizes(frames.shape[0], target)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    sums = np.add.reduceat(frames, starts, axis=0)
    return sums / np.asarray(sizes, dtype=frames.dtype)[:, None]
