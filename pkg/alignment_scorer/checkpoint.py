"""
Versioned flat checkpoint archive.

Layout (all integers little-endian):

    magic      4 bytes  b'ALSC'
    version    uint32
    header_len uint64
    header     UTF-8 JSON, sorted keys: stage, config_hash, model_config and a
               tensor manifest of {name, shape, dtype, trainable, offset, nbytes}
    payload    raw little-endian tensor bytes, concatenated in manifest order

Offsets are relative to the start of the payload. Readers reject any other
magic or version.
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .exceptions import CheckpointError
from .optim import ParamSet

logger = logging.getLogger(__name__)

MAGIC = b'ALSC'
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct('<4sIQ')
_DTYPES = {'float64': '<f8', 'float32': '<f4'}


@dataclass
class Checkpoint:
    stage: str
    params: ParamSet
    model_config: ModelConfig
    config_hash: str = ''

    def to_bytes(self) -> bytes:
        manifest, payload, offset = [], [], 0
        for name in sorted(self.params.names()):
            array = self.params[name]
            dtype = str(array.dtype)
            if dtype not in _DTYPES:
                raise CheckpointError(f'unsupported dtype {dtype} for {name}')
            raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
            manifest.append({
                'name': name,
                'shape': list(array.shape),
                'dtype': dtype,
                'trainable': self.params.is_trainable(name),
                'offset': offset,
                'nbytes': len(raw),
            })
            payload.append(raw)
            offset += len(raw)
        header = json.dumps({
            'stage': self.stage,
            'config_hash': self.config_hash,
            'model_config': self.model_config.model_dump(mode='json'),
            'tensors': manifest,
        }, sort_keys=True, separators=(',', ':')).encode('utf-8')
        return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b''.join(payload)

    @classmethod
    def from_bytes(cls, blob: bytes) -> 'Checkpoint':
        if len(blob) < _PREAMBLE.size:
            raise CheckpointError('checkpoint is truncated')
        magic, version, header_len = _PREAMBLE.unpack_from(blob)
        if magic != MAGIC:
            raise CheckpointError('not a checkpoint archive')
        if version != FORMAT_VERSION:
            raise CheckpointError(f'unsupported checkpoint version {version}')
        start = _PREAMBLE.size
        try:
            header = json.loads(blob[start:start + header_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f'corrupt checkpoint header: {e}') from e
        payload = memoryview(blob)[start + header_len:]
        try:
            return cls._from_header(header, payload)
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f'malformed checkpoint header: {type(e).__name__}: {e}') from e

    @classmethod
    def _from_header(cls, header: dict, payload: memoryview) -> 'Checkpoint':
        params = ParamSet()
        for entry in header['tensors']:
            end = entry['offset'] + entry['nbytes']
            if end > len(payload):
                raise CheckpointError(f'payload for {entry["name"]} is truncated')
            array = np.frombuffer(payload[entry['offset']:end], dtype=_DTYPES[entry['dtype']])
            array = array.astype(entry['dtype']).reshape(entry['shape'])
            params.add(entry['name'], array, trainable=entry['trainable'])
        return cls(
            stage=header['stage'],
            params=params,
            model_config=ModelConfig(**header['model_config']),
            config_hash=header['config_hash'],
        )

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ckpt.to_bytes())
    logger.info(f'Saved {ckpt.stage} checkpoint ({len(ckpt.params)} tensors) to {path}')
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'checkpoint not found: {path}')
    return Checkpoint.from_bytes(path.read_bytes())
