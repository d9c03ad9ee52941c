"""
Audio-caption pair records, the TSV manifest format, and batching.

Manifest: UTF-8, tab separated, header row required. Columns `id`,
`audio_ref` and `caption` are mandatory; `label`, `provenance` and
`source_ids` (comma separated) are optional.
"""
import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .exceptions import ConfigError, DuplicateIdError, ManifestError
from .rng import make_rng

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ('id', 'audio_ref', 'caption')
OPTIONAL_COLUMNS = ('label', 'provenance', 'source_ids')
Provenance = Literal['matched', 'negative_audio', 'negative_text']


class PairRecord(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    id: str
    audio_ref: str
    caption: str
    label: Optional[float] = None
    provenance: Provenance = 'matched'
    source_ids: Tuple[str, ...] = ()

    @field_validator('id', 'audio_ref', 'caption')
    @classmethod
    def not_blank(cls, value: str) -> str:
        if not value or not value.strip():
            raise ValueError('must not be empty')
        return value

    @field_validator('label')
    @classmethod
    def finite_label(cls, value):
        if value is not None and not math.isfinite(value):
            raise ValueError('label must be finite')
        return value

    @model_validator(mode='before')
    @classmethod
    def default_sources(cls, data):
        if isinstance(data, dict) and data.get('provenance', 'matched') == 'matched' \
                and not data.get('source_ids'):
            data = {**data, 'source_ids': (data.get('id'),)}
        return data

    @model_validator(mode='after')
    def check_sources(self):
        if self.provenance == 'matched':
            if self.source_ids != (self.id,):
                raise ValueError('a matched record is its own source')
        elif len(self.source_ids) != 2 or self.source_ids[0] == self.source_ids[1]:
            raise ValueError('a negative record names two distinct source ids')
        return self

    @property
    def is_matched(self) -> bool:
        return self.provenance == 'matched'

    def with_label(self, label: Optional[float]) -> 'PairRecord':
        return self.model_copy(update={'label': None if label is None else float(label)})


def _describe(error: ValidationError) -> str:
    return '; '.join(f'{".".join(str(p) for p in e["loc"]) or "row"}: {e["msg"]}' for e in error.errors())


def load_manifest(path, data_root=None) -> List[PairRecord]:
    """
    Parse and validate a manifest; relative paths resolve against `data_root`
    """
    path = Path(path)
    if not path.is_absolute() and data_root is not None:
        path = Path(data_root) / path
    if not path.is_file():
        raise ManifestError(f'manifest not found: {path}')
    records, seen = [], {}
    with path.open('r', encoding='utf-8', newline='') as handle:
        reader = csv.reader(handle, delimiter='\t', quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise ManifestError(f'{path} is empty; a header row is required', line=1)
        columns = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in columns]
        unknown = [c for c in columns if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
        if missing or unknown:
            raise ManifestError(f'bad header: missing {missing}, unknown {unknown}', line=1)
        for line, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) > len(columns):
                raise ManifestError(f'{len(row)} fields for {len(columns)} columns', line=line)
            values = dict(zip(columns, row + [''] * (len(columns) - len(row))))
            record = _parse_row(values, line)
            if record.id in seen:
                raise DuplicateIdError(f'duplicate id {record.id!r} (first seen on line {seen[record.id]})',
                                       line=line)
            seen[record.id] = line
            records.append(record)
    logger.debug(f'Loaded {len(records)} records from {path}')
    return records


def _parse_row(values: dict, line: int) -> PairRecord:
    data = {
        'id': values['id'],
        'audio_ref': values['audio_ref'],
        'caption': values['caption'],
    }
    label = values.get('label', '').strip()
    if label:
        try:
            data['label'] = float(label)
        except ValueError:
            raise ManifestError(f'label {label!r} is not a number', line=line)
    provenance = values.get('provenance', '').strip()
    if provenance:
        data['provenance'] = provenance
    sources = values.get('source_ids', '').strip()
    if sources:
        data['source_ids'] = tuple(s.strip() for s in sources.split(','))
    try:
        return PairRecord(**data)
    except ValidationError as e:
        raise ManifestError(_describe(e), line=line) from e


def write_manifest(records: Iterable[PairRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as handle:
        handle.write('\t'.join(REQUIRED_COLUMNS + OPTIONAL_COLUMNS) + '\n')
        for record in records:
            if '\t' in record.caption or '\n' in record.caption:
                raise ManifestError(f'caption of {record.id!r} contains a tab or newline')
            handle.write('\t'.join((
                record.id,
                record.audio_ref,
                record.caption,
                '' if record.label is None else repr(record.label),
                record.provenance,
                ','.join(record.source_ids),
            )) + '\n')
    return path


def labels_of(records: Sequence[PairRecord]) -> List[float]:
    missing = [r.id for r in records if r.label is None]
    if missing:
        raise ConfigError(f'{len(missing)} records have no label, e.g. {missing[0]!r}')
    return [r.label for r in records]


def make_batches(records: Sequence[PairRecord], batch_size: int, seed: int,
                 drop_last: bool = False) -> List[List[PairRecord]]:
    """
    Seeded permutation cut into contiguous batches. The permutation is the
    single draw `permutation(n)` on the stream (seed, 'batches').
    """
    if batch_size < 2:
        raise ConfigError('batch_size must be at least 2')
    order = make_rng(seed, 'batches').permutation(len(records))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if drop_last and len(chunk) < batch_size:
            break
        batches.append([records[i] for i in chunk])
    return batches
