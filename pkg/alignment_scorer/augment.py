"""
Training-data augmentation: negative sampling over matched pairs,
SpecAugment masking of encoder features, and label normalisation.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .audio import AudioFeatureSeq
from .config import SpecAugmentParams
from .exceptions import AugmentError, ConfigError, DegenerateError, MaskParamError
from .records import PairRecord, labels_of
from .rng import make_rng

logger = logging.getLogger(__name__)

MAX_REDRAWS = 1000
LABEL_TRANSFORMS = ('none', 'standardize', 'minmax')


def augmented_size(n: int, k: int) -> int:
    return n * (1 + k)


def negative_sample_augment(records: Sequence[PairRecord], k: int, seed: int) -> List[PairRecord]:
    """
    Originals followed by k negatives per original, in record order.

    Draw order on the stream (seed, 'negative-sampling'), per record i and
    per negative j: `integers(0, 2)` picks the replaced side (0 audio,
    1 text), then `integers(0, N - 1)` picks the donor, shifted up by one
    when it reaches i. A draw whose (audio_ref, caption) pair equals any
    matched pair is discarded and both draws are repeated.
    """
    if k < 0:
        raise AugmentError(f'negatives per positive must be >= 0, got {k}')
    if any(not r.is_matched for r in records):
        raise AugmentError('negative sampling takes matched records only')
    records = list(records)
    if k == 0:
        return records
    n = len(records)
    if n < 2:
        raise AugmentError('negative sampling needs at least 2 matched records')
    matched = {(r.audio_ref, r.caption) for r in records}
    rng = make_rng(seed, 'negative-sampling')
    negatives = []
    for i, record in enumerate(records):
        for j in range(k):
            for _ in range(MAX_REDRAWS):
                replace_text = int(rng.integers(0, 2)) == 1
                donor_index = int(rng.integers(0, n - 1))
                donor = records[donor_index + 1 if donor_index >= i else donor_index]
                if replace_text:
                    pair = (record.audio_ref, donor.caption)
                else:
                    pair = (donor.audio_ref, record.caption)
                if pair not in matched:
                    break
            else:
                raise AugmentError(f'no valid negative for {record.id!r} after {MAX_REDRAWS} draws')
            negatives.append(PairRecord(
                id=f'{record.id}~neg{j}',
                audio_ref=pair[0],
                caption=pair[1],
                provenance='negative_text' if replace_text else 'negative_audio',
                source_ids=(record.id, donor.id),
            ))
    logger.info(f'Negative sampling: {n} matched -> {n + len(negatives)} records (k={k})')
    return records + negatives


@dataclass(frozen=True)
class MaskSet:
    time: Tuple[Tuple[int, int], ...]
    channel: Tuple[Tuple[int, int], ...]


def spec_augment_masks(num_frames: int, channels: int, params: SpecAugmentParams, seed: int) -> MaskSet:
    """
    Mask (start, width) pairs. Draw order on the stream (seed,
    'spec-augment'): all time masks, then all channel masks; per mask
    `integers(0, max_width + 1)` for the width, then
    `integers(0, axis_len - width + 1)` for the start.
    """
    if params.time_mask_width > num_frames:
        raise MaskParamError(f'time mask width {params.time_mask_width} exceeds {num_frames} frames')
    if params.freq_mask_width > channels:
        raise MaskParamError(f'channel mask width {params.freq_mask_width} exceeds {channels} channels')
    rng = make_rng(seed, 'spec-augment')

    def draw(max_width: int, length: int):
        masks = []
        for _ in range(params.masks_per_axis):
            width = int(rng.integers(0, max_width + 1))
            start = int(rng.integers(0, length - width + 1))
            masks.append((start, width))
        return tuple(masks)

    time = draw(params.time_mask_width, num_frames)
    return MaskSet(time=time, channel=draw(params.freq_mask_width, channels))


def spec_augment(feat: AudioFeatureSeq, params: SpecAugmentParams, seed: int) -> AudioFeatureSeq:
    """
    Zero the drawn frame bands and channel bands; everything else is untouched
    """
    masks = spec_augment_masks(feat.num_frames, feat.channels, params, seed)
    frames = feat.frames.copy()
    for start, width in masks.time:
        frames[start:start + width, :] = 0.0
    for start, width in masks.channel:
        frames[:, start:start + width] = 0.0
    return AudioFeatureSeq(frames=frames, frame_rate=feat.frame_rate)


def transform_labels(records: Sequence[PairRecord], mode: str = 'none') -> List[PairRecord]:
    """
    none, standardize (zero mean, unit variance) or minmax (onto [0, 1])
    """
    if mode not in LABEL_TRANSFORMS:
        raise ConfigError(f'unknown label transform {mode!r}')
    if mode == 'none':
        return list(records)
    labels = np.asarray(labels_of(records), dtype=np.float64)
    if mode == 'standardize':
        spread = labels.std()
        if spread == 0:
            raise DegenerateError('cannot standardize constant labels')
        scaled = (labels - labels.mean()) / spread
    else:
        low, high = labels.min(), labels.max()
        if high == low:
            raise DegenerateError('cannot min-max scale constant labels')
        scaled = (labels - low) / (high - low)
    return [r.with_label(float(v)) for r, v in zip(records, scaled)]
