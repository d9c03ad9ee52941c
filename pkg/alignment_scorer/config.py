"""
Typed configuration: model geometry, optimizer, SpecAugment and stage
configs, their presets, and the flat key-value stage config file loader.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional

from decouple import RepositoryEnv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

BYTE_VOCAB = 256
TRAINABLE_GROUPS = ('projection', 'llm', 'score_head')


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    # frozen encoder stand-in
    enc_dim: int = Field(16, ge=1)
    enc_rate: float = Field(50.0, gt=0)
    clip_seconds: float = Field(10.0, gt=0)
    latent_dim: int = Field(8, ge=1)
    encoder_seed: int = 0

    # projection
    audio_tokens: int = Field(8, ge=1)
    proj_layers: int = Field(3, ge=1)

    # causal LM
    llm_dim: int = Field(32, ge=1)
    llm_layers: int = Field(2, ge=0)
    llm_heads: int = Field(4, ge=1)
    ffn_dim: int = Field(64, ge=1)
    vocab_size: int = Field(260, ge=1)
    max_seq_len: int = Field(128, ge=2)
    audio_start_id: int = 256
    audio_end_id: int = 257
    score_id: int = 258
    eos_id: int = 259
    norm_eps: float = Field(1e-6, gt=0)
    init_std: float = Field(0.02, gt=0)
    score_readout: Literal['score_token', 'last_token'] = 'score_token'

    @model_validator(mode='after')
    def check_geometry(self):
        specials = (self.audio_start_id, self.audio_end_id, self.score_id, self.eos_id)
        if len(set(specials)) != len(specials):
            raise ValueError('special token ids must be distinct')
        if any(s < 0 or s >= self.vocab_size for s in specials):
            raise ValueError('special token ids must be < vocab_size')
        if any(s < BYTE_VOCAB for s in specials):
            raise ValueError('special token ids must not collide with byte tokens')
        if self.llm_dim % self.llm_heads:
            raise ValueError('llm_dim must be divisible by llm_heads')
        return self

    @property
    def head_dim(self) -> int:
        return self.llm_dim // self.llm_heads

    @property
    def proj_hidden(self) -> int:
        return 2 * self.llm_dim

    @property
    def clip_frames(self) -> int:
        return int(round(self.clip_seconds * self.enc_rate))


MODEL_PRESETS = {
    'desk': {},
    # Full scale: 768-dim encoder at 50 frames/s, 100 audio tokens,
    # 896-dim 24-layer LM, 3-layer projection, linear 896 -> 1 head.
    'full': {
        'enc_dim': 768,
        'enc_rate': 50.0,
        'clip_seconds': 10.0,
        'latent_dim': 64,
        'audio_tokens': 100,
        'proj_layers': 3,
        'llm_dim': 896,
        'llm_layers': 24,
        'llm_heads': 14,
        'ffn_dim': 4864,
        'vocab_size': 151936,
        'max_seq_len': 4096,
        'audio_start_id': 151665,
        'audio_end_id': 151666,
        'score_id': 151667,
        'eos_id': 151643,
    },
    'micro': {
        'enc_dim': 4,
        'clip_seconds': 0.2,
        'latent_dim': 3,
        'audio_tokens': 2,
        'proj_layers': 1,
        'llm_dim': 4,
        'llm_layers': 1,
        'llm_heads': 1,
        'ffn_dim': 4,
        'max_seq_len': 48,
    },
}


def model_preset(name: str, **overrides) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ConfigError(f'unknown model preset {name!r}')
    try:
        return ModelConfig(**{**MODEL_PRESETS[name], **overrides})
    except ValidationError as e:
        raise ConfigError(str(e)) from e


class AdamWConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    lr: float = Field(1e-5, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)


class SpecAugmentParams(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    freq_mask_width: int = Field(15, ge=0)
    time_mask_width: int = Field(30, ge=0)
    masks_per_axis: int = Field(1, ge=0)


# Per-stage training presets (AdamW, batch size 16; lr and epochs per stage).
STAGE_PRESETS = {
    1: {'lr': 1e-5, 'epochs': 3, 'batch_size': 16, 'loss': 'next_token_ce',
        'trainable': ['projection', 'llm']},
    2: {'lr': 1e-5, 'epochs': 20, 'batch_size': 16, 'loss': 'listnet',
        'trainable': ['projection', 'llm', 'score_head']},
    3: {'lr': 6.2e-6, 'epochs': 150, 'batch_size': 16, 'loss': 'listnet',
        'trainable': ['projection', 'llm', 'score_head'],
        'augment': {'freq_mask_width': 15, 'time_mask_width': 30, 'masks_per_axis': 1}},
}

_NONE_STRINGS = ('', 'none', 'null')


class StageConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    stage: Literal[1, 2, 3]
    lr: float = Field(ge=0)
    epochs: int = Field(ge=0)
    batch_size: int = Field(16, ge=2)
    loss: Literal['next_token_ce', 'listnet']
    augment: Optional[SpecAugmentParams] = None
    trainable: List[str]
    train_manifest: Optional[str] = None
    valid_manifest: Optional[str] = None
    teacher: Optional[str] = None
    negatives_per_positive: int = Field(3, ge=0)
    label_transform: Literal['none', 'standardize', 'minmax'] = 'none'
    listnet_temperature: float = Field(1.0, gt=0)
    seed: int = 7
    init_checkpoint: Optional[str] = None
    model_preset: str = 'desk'
    model: ModelConfig = None
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    grad_clip: Optional[float] = Field(None, gt=0)
    dtype: Literal['float64', 'float32'] = 'float64'
    drop_last: bool = False
    select_best: bool = True
    data_root: Optional[str] = None
    log_path: Optional[str] = None

    @model_validator(mode='before')
    @classmethod
    def apply_presets(cls, data):
        if not isinstance(data, dict):
            return data
        data = {k: (None if isinstance(v, str) and v.strip().lower() in _NONE_STRINGS else v)
                for k, v in data.items()}
        try:
            stage = int(data.get('stage'))
        except (TypeError, ValueError):
            return data
        preset_stage = STAGE_PRESETS.get(stage, {})
        merged = {**preset_stage, **data, 'stage': stage}
        augment = data.get('augment', preset_stage.get('augment'))
        if isinstance(augment, dict):
            augment = {**preset_stage.get('augment', {}), **augment}
        merged['augment'] = augment
        preset = merged.get('model_preset') or 'desk'
        overrides = merged.get('model') or {}
        if isinstance(overrides, dict):
            merged['model'] = {**MODEL_PRESETS.get(preset, {}), **overrides}
        return merged

    @field_validator('trainable', mode='before')
    @classmethod
    def split_groups(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(',') if part.strip()]
        return value

    @model_validator(mode='after')
    def check_stage(self):
        unknown = set(self.trainable) - set(TRAINABLE_GROUPS)
        if unknown:
            raise ValueError(f'unknown or frozen trainable groups: {sorted(unknown)}')
        if self.model_preset not in MODEL_PRESETS:
            raise ValueError(f'unknown model preset {self.model_preset!r}')
        if self.stage == 1:
            if self.loss != 'next_token_ce':
                raise ValueError('stage 1 trains with next_token_ce')
            if 'score_head' in self.trainable:
                raise ValueError('stage 1 does not train the score head')
        else:
            if self.loss != 'listnet':
                raise ValueError(f'stage {self.stage} trains with listnet')
            if 'score_head' not in self.trainable:
                raise ValueError(f'stage {self.stage} must train the score head')
        return self

    @property
    def optimizer(self) -> AdamWConfig:
        return AdamWConfig(lr=self.lr, beta1=self.adam_beta1, beta2=self.adam_beta2,
                           eps=self.adam_eps, weight_decay=self.weight_decay)

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        """
        Resolve a data path against the declared data root
        """
        if path is None:
            return None
        candidate = Path(path)
        if candidate.is_absolute() or self.data_root is None:
            return candidate
        return Path(self.data_root) / candidate


def build_stage_config(**values) -> StageConfig:
    try:
        return StageConfig(**values)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = '.'.join(str(p) for p in item['loc']) or 'config'
        parts.append(f'{location}: {item["msg"]}')
    return '; '.join(parts)


def _nest(flat: dict) -> dict:
    nested = {}
    for key, value in flat.items():
        node = nested
        *parents, leaf = key.split('.')
        for parent in parents:
            child = node.setdefault(parent, {})
            if not isinstance(child, dict):
                raise ConfigError(f'key {key!r} conflicts with scalar {parent!r}')
            node = child
        if leaf in node and isinstance(node[leaf], dict):
            raise ConfigError(f'key {key!r} conflicts with nested keys')
        node[leaf] = value
    return nested


def _check_lines(path: Path):
    # RepositoryEnv skips lines without '=' silently
    with path.open('r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if text and not text.startswith('#') and '=' not in text:
                raise ConfigError(f'{path}:{number}: expected `key = value`, got {text!r}')


def load_stage_config(path, defaults: dict = None, **overrides) -> StageConfig:
    """
    Read a flat `key = value` stage config file. Dotted keys address nested
    fields (`model.llm_dim`, `augment.time_mask_width`); unknown keys are
    rejected. `defaults` fill keys the file omits, `overrides` win over it.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'config file not found: {path}')
    try:
        _check_lines(path)
        flat = {**(defaults or {}), **RepositoryEnv(str(path)).data}
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f'cannot read config {path}: {e}') from e
    flat.update({k: v for k, v in overrides.items() if v is not None})
    logger.debug(f'Loaded {len(flat)} config keys from {path}')
    return build_stage_config(**_nest(flat))


_PATH_FIELDS = ('train_manifest', 'valid_manifest', 'teacher', 'init_checkpoint')


def _relative_to_root(value: Optional[str], data_root: Optional[str]) -> Optional[str]:
    if value is None or data_root is None or not Path(value).is_absolute():
        return value
    try:
        return Path(value).relative_to(Path(data_root)).as_posix()
    except ValueError:
        return value


def config_hash(cfg: BaseModel) -> str:
    """
    SHA-256 of the canonical JSON dump. The metric log path and the data root
    are not part of a run's identity; data paths under the root are hashed
    relative to it.
    """
    if isinstance(cfg, StageConfig):
        dump = cfg.model_dump(mode='json', exclude={'log_path', 'data_root'})
        for key in _PATH_FIELDS:
            dump[key] = _relative_to_root(dump[key], cfg.data_root)
    else:
        dump = cfg.model_dump(mode='json')
    canonical = json.dumps(dump, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
