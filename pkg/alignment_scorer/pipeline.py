"""
The three training stages, evaluation and ensembling.

    stage 1  captioning pretraining of projection + LM (next-token CE)
    stage 2  score head added; ListNet on teacher pseudo-labels over
             matched pairs plus sampled negatives
    stage 3  ListNet fine-tuning on human-style labels with SpecAugment,
             keeping the epoch with the best validation SRCC
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .augment import negative_sample_augment, transform_labels
from .autograd import forward_backward
from .checkpoint import Checkpoint, load_checkpoint
from .config import ModelConfig, StageConfig, config_hash
from .exceptions import ConfigError, DegenerateError, ManifestError
from .losses import listnet_loss
from .metrics import (PredictionSet, TrigramEmbedder, caption_similarity_score, prediction_srcc,
                      rank_average_ensemble, read_predictions, write_predictions)
from .network import AlignmentScorer, add_score_head, init_params
from .optim import ParamSet, adamw_step, clip_grad_norm, init_adamw
from .records import PairRecord, labels_of, load_manifest, make_batches
from .rng import derive_seed
from .services import InferenceService
from .teachers import TeacherSpec, load_teacher, pseudo_label
from .utils import RunLogger

logger = logging.getLogger(__name__)

ALWAYS_FROZEN = ('encoder',)


@dataclass
class StageResult:
    checkpoint: Checkpoint
    run_log: RunLogger
    final_loss: Optional[float] = None
    best_epoch: Optional[int] = None


@dataclass
class EvalReport:
    srcc: float
    n: int
    predictions: PredictionSet
    config_hash: str
    checkpoint_id: str

    def to_dict(self, predictions_path=None) -> dict:
        return {
            'checkpoint_id': self.checkpoint_id,
            'config_hash': self.config_hash,
            'n': self.n,
            'predictions': str(predictions_path) if predictions_path else None,
            'srcc': self.srcc,
        }


# -- setup -----------------------------------------------------------------

def _load_init(cfg: StageConfig, init: Optional[Checkpoint]) -> Optional[Checkpoint]:
    if init is not None:
        return init
    if cfg.init_checkpoint:
        return load_checkpoint(cfg.resolve(cfg.init_checkpoint))
    return None


def _model_config(cfg: StageConfig, init: Optional[Checkpoint]) -> ModelConfig:
    if init is None:
        return cfg.model
    if init.model_config != cfg.model:
        logger.warning('Model geometry comes from the init checkpoint; config model settings are ignored')
    return init.model_config


def _records(cfg: StageConfig, path: Optional[str], what: str, required: bool = True) -> List[PairRecord]:
    if not path:
        if required:
            raise ConfigError(f'stage {cfg.stage} needs a {what} manifest')
        return []
    return load_manifest(cfg.resolve(path))


def _trainable(params: ParamSet, cfg: StageConfig) -> ParamSet:
    return params.with_trainable(cfg.trainable, always_frozen=ALWAYS_FROZEN).astype(np.dtype(cfg.dtype))


def initialize(cfg: StageConfig, with_score_head: bool = True, score_bias: float = 0.0) -> Checkpoint:
    """
    Fresh parameters tagged `init`, e.g. the start of a stage-3-only run
    """
    params = init_params(cfg.model, cfg.seed, with_score_head=with_score_head, score_bias=score_bias)
    return Checkpoint(stage='init', params=_trainable(params, cfg), model_config=cfg.model,
                      config_hash=config_hash(cfg))


# -- batch losses ------------------------------------------------------------

class FeatureCache:
    """
    Pooled encoder features per audio ref; augmented features are never cached
    """

    def __init__(self, scorer: AlignmentScorer, cfg: StageConfig):
        self.scorer = scorer
        self.augment = cfg.augment
        self.seed = cfg.seed
        self._plain: Dict[str, np.ndarray] = {}

    def pooled(self, record: PairRecord, epoch: int, train: bool = True) -> np.ndarray:
        if train and self.augment is not None:
            seed = derive_seed(self.seed, 'spec-augment', epoch, record.id)
            return self.scorer.pooled_features(record.audio_ref, self.augment, seed)
        if record.audio_ref not in self._plain:
            self._plain[record.audio_ref] = self.scorer.pooled_features(record.audio_ref)
        return self._plain[record.audio_ref]

    def stack(self, batch: Sequence[PairRecord], epoch: int, train: bool = True) -> np.ndarray:
        return np.stack([self.pooled(r, epoch, train) for r in batch])


def captioning_batch_loss(scorer: AlignmentScorer, features: FeatureCache, weights, batch: Sequence[PairRecord],
                          epoch: int):
    encode = scorer.tokenizer.encode
    return scorer.caption_loss_batch(weights, features.stack(batch, epoch), [encode(r.caption) for r in batch])


def ranking_batch_loss(scorer: AlignmentScorer, features: FeatureCache, weights, batch: Sequence[PairRecord],
                       epoch: int, temperature: float = 1.0):
    encode = scorer.tokenizer.encode
    scores = scorer.score_batch(weights, [encode(r.caption) for r in batch], features.stack(batch, epoch))
    return listnet_loss(scores, [r.label for r in batch], temperature)


# -- training loop -----------------------------------------------------------

def _validation_srcc(scorer: AlignmentScorer, params: ParamSet, records: Sequence[PairRecord]) -> Optional[float]:
    predictions = InferenceService(scorer, params).predict(records)
    labels = PredictionSet({r.id: r.label for r in records})
    try:
        return prediction_srcc(predictions, labels)
    except DegenerateError as e:
        logger.warning(f'Validation SRCC undefined: {e}')
        return None


def _fit(cfg: StageConfig, params: ParamSet, records: Sequence[PairRecord],
         batch_loss: Callable, run_log: RunLogger, min_batch: int,
         validate: Callable[[ParamSet], Optional[float]] = None, select_best: bool = False):
    """
    AdamW over seeded minibatches. Logs the mean training loss per epoch
    (each batch loss taken before its update) and the validation SRCC when a
    validator is given. Returns (params, final loss, best epoch).
    """
    state = init_adamw(params, cfg.optimizer)
    best_params, best_epoch, best_srcc = params, None, None
    final_loss = None
    for epoch in tqdm(range(1, cfg.epochs + 1), desc=f'stage {cfg.stage}', disable=None):
        batches = make_batches(records, cfg.batch_size, derive_seed(cfg.seed, 'epoch', epoch), cfg.drop_last)
        losses = []
        for batch in batches:
            if len(batch) < min_batch:
                logger.debug(f'Skipping a batch of {len(batch)} records')
                continue
            value, grads = forward_backward(lambda w: batch_loss(w, batch, epoch), params)
            if cfg.grad_clip is not None:
                grads = clip_grad_norm(grads, cfg.grad_clip)
            params, state = adamw_step(params, grads, state)
            losses.append(value)
        if losses:
            final_loss = float(np.mean(losses))
            run_log.log(epoch, 'train', 'loss', final_loss)
        if validate is not None:
            srcc = validate(params)
            if srcc is not None:
                run_log.log(epoch, 'valid', 'srcc', srcc)
                if best_srcc is None or srcc > best_srcc:
                    best_params, best_epoch, best_srcc = params, epoch, srcc
    if select_best and best_epoch is not None:
        logger.info(f'Keeping epoch {best_epoch} (validation SRCC {best_srcc:.4f})')
        return best_params, final_loss, best_epoch
    return params, final_loss, None


def _finish(stage: str, cfg: StageConfig, params: ParamSet, model_cfg: ModelConfig, run_log: RunLogger,
            final_loss=None, best_epoch=None) -> StageResult:
    ckpt = Checkpoint(stage=stage, params=params, model_config=model_cfg, config_hash=config_hash(cfg))
    return StageResult(checkpoint=ckpt, run_log=run_log, final_loss=final_loss, best_epoch=best_epoch)


# -- stages ------------------------------------------------------------------

def run_stage1(cfg: StageConfig, init: Checkpoint = None, run_log: RunLogger = None) -> StageResult:
    if cfg.stage != 1:
        raise ConfigError(f'run_stage1 got a stage {cfg.stage} config')
    run_log = run_log or RunLogger(cfg.resolve(cfg.log_path))
    init = _load_init(cfg, init)
    model_cfg = _model_config(cfg, init)
    params = init.params if init is not None else init_params(model_cfg, cfg.seed)
    params = _trainable(params, cfg)
    records = _records(cfg, cfg.train_manifest, 'train')
    scorer = AlignmentScorer.from_params(params, model_cfg, cfg.data_root)
    features = FeatureCache(scorer, cfg)
    logger.info(f'Stage 1: {len(records)} captions, {cfg.epochs} epochs')

    def batch_loss(weights, batch, epoch):
        return captioning_batch_loss(scorer, features, weights, batch, epoch)

    params, final_loss, _ = _fit(cfg, params, records, batch_loss, run_log, min_batch=1)
    return _finish('stage1', cfg, params, model_cfg, run_log, final_loss)


def stage2_training_records(cfg: StageConfig, records: Sequence[PairRecord],
                            teacher: Optional[TeacherSpec]) -> List[PairRecord]:
    """
    With a teacher: matched records plus k sampled negatives each, all
    pseudo-labelled. Without one, the manifest must carry every label.
    """
    if teacher is not None:
        matched = [r for r in records if r.is_matched]
        extra = [r for r in records if not r.is_matched]
        augmented = negative_sample_augment(matched, cfg.negatives_per_positive,
                                            derive_seed(cfg.seed, 'negatives'))
        records = pseudo_label(augmented + extra, teacher)
    labels_of(records)
    return transform_labels(records, cfg.label_transform)


def _with_score_head(params: ParamSet, model_cfg: ModelConfig, cfg: StageConfig,
                     records: Sequence[PairRecord]) -> ParamSet:
    if 'score_head.weight' in params:
        return params
    bias = float(np.mean(labels_of(records)))
    logger.info(f'Adding a score head (bias {bias:.4f})')
    return add_score_head(params, model_cfg, cfg.seed, bias=bias)


def _validation_records(cfg: StageConfig, teacher: Optional[TeacherSpec]) -> List[PairRecord]:
    records = _records(cfg, cfg.valid_manifest, 'validation', required=False)
    if records and teacher is not None and any(r.label is None for r in records):
        records = pseudo_label(records, teacher)
    if records:
        labels_of(records)
    return records


def _run_ranking_stage(cfg: StageConfig, init: Optional[Checkpoint], run_log: RunLogger,
                       records: List[PairRecord], valid: List[PairRecord], select_best: bool) -> StageResult:
    model_cfg = _model_config(cfg, init)
    params = init.params if init is not None else init_params(model_cfg, cfg.seed)
    params = _trainable(_with_score_head(params, model_cfg, cfg, records), cfg)
    scorer = AlignmentScorer.from_params(params, model_cfg, cfg.data_root)
    features = FeatureCache(scorer, cfg)

    def batch_loss(weights, batch, epoch):
        return ranking_batch_loss(scorer, features, weights, batch, epoch, cfg.listnet_temperature)

    validate = (lambda p: _validation_srcc(scorer, p, valid)) if valid else None
    params, final_loss, best_epoch = _fit(cfg, params, records, batch_loss, run_log, min_batch=2,
                                          validate=validate, select_best=select_best)
    return _finish(f'stage{cfg.stage}', cfg, params, model_cfg, run_log, final_loss, best_epoch)


def run_stage2(cfg: StageConfig, init: Checkpoint = None, run_log: RunLogger = None) -> StageResult:
    """
    `init` is a stage-1 checkpoint, or None for fresh initialisation
    """
    if cfg.stage != 2:
        raise ConfigError(f'run_stage2 got a stage {cfg.stage} config')
    run_log = run_log or RunLogger(cfg.resolve(cfg.log_path))
    init = _load_init(cfg, init)
    teacher = load_teacher(cfg.resolve(cfg.teacher)) if cfg.teacher else None
    records = stage2_training_records(cfg, _records(cfg, cfg.train_manifest, 'train'), teacher)
    valid = _validation_records(cfg, teacher)
    logger.info(f'Stage 2: {len(records)} labelled pairs, {len(valid)} held out, {cfg.epochs} epochs')
    return _run_ranking_stage(cfg, init, run_log, records, valid, select_best=False)


def run_stage3(cfg: StageConfig, init: Checkpoint = None, run_log: RunLogger = None) -> StageResult:
    """
    `init` is a stage-2 checkpoint, or an `init` checkpoint for a
    stage-3-only run
    """
    if cfg.stage != 3:
        raise ConfigError(f'run_stage3 got a stage {cfg.stage} config')
    run_log = run_log or RunLogger(cfg.resolve(cfg.log_path))
    init = _load_init(cfg, init)
    if init is None:
        raise ConfigError('stage 3 starts from a checkpoint (init_checkpoint or --init)')
    records = _records(cfg, cfg.train_manifest, 'train')
    labels_of(records)
    records = transform_labels(records, cfg.label_transform)
    valid = _validation_records(cfg, None)
    logger.info(f'Stage 3: {len(records)} labelled pairs, {len(valid)} validation, {cfg.epochs} epochs')
    return _run_ranking_stage(cfg, init, run_log, records, valid, select_best=cfg.select_best)


STAGE_RUNNERS = {1: run_stage1, 2: run_stage2, 3: run_stage3}


# -- evaluation ----------------------------------------------------------------

def evaluate(ckpt: Checkpoint, records: Sequence[PairRecord], data_root=None, workers: int = None) -> EvalReport:
    """
    Predict every record (no augmentation) and correlate with its label
    """
    if 'score_head.weight' not in ckpt.params:
        raise ConfigError(f'{ckpt.stage} checkpoint has no score head')
    labels = PredictionSet({r.id: label for r, label in zip(records, labels_of(records))})
    scorer = AlignmentScorer.from_params(ckpt.params, ckpt.model_config, data_root)
    predictions = InferenceService(scorer, ckpt.params, workers=workers).predict(records)
    return EvalReport(srcc=prediction_srcc(predictions, labels), n=len(predictions), predictions=predictions,
                      config_hash=ckpt.config_hash, checkpoint_id=ckpt.checkpoint_id)


def write_report(report: EvalReport, report_path, predictions_path=None) -> Path:
    report_path = Path(report_path)
    predictions_path = Path(predictions_path) if predictions_path else report_path.with_suffix('.predictions.tsv')
    write_predictions(report.predictions, predictions_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report.to_dict(predictions_path), indent=2, sort_keys=True) + '\n',
                           encoding='utf-8')
    return predictions_path


@dataclass
class CaptionReport:
    mean_similarity: float
    n: int
    captions: Dict[str, str] = field(default_factory=dict)


def evaluate_captions(ckpt: Checkpoint, records: Sequence[PairRecord], embed_seed: int = 7,
                      max_len: int = 64, data_root=None) -> CaptionReport:
    """
    Mean cosine similarity between greedy captions and reference captions
    """
    if not records:
        raise ManifestError('no records to caption')
    scorer = AlignmentScorer.from_params(ckpt.params, ckpt.model_config, data_root)
    weights = ckpt.params.as_tensors(track=False)
    embedder = TrigramEmbedder(seed=embed_seed)
    similarities, captions = [], {}
    for record in tqdm(records, desc='captioning', disable=None):
        generated = scorer.generate(record.audio_ref, weights, max_len)
        captions[record.id] = scorer.tokenizer.decode(generated)
        similarities.append(caption_similarity_score(generated, scorer.tokenizer.encode(record.caption), embedder))
    return CaptionReport(mean_similarity=float(np.mean(similarities)), n=len(records), captions=captions)


def evaluate_teacher(teacher: TeacherSpec, records: Sequence[PairRecord]) -> EvalReport:
    """
    The teacher itself as a predictor of the manifest labels
    """
    labels = PredictionSet({r.id: label for r, label in zip(records, labels_of(records))})
    predictions = PredictionSet({r.id: r.label for r in pseudo_label(records, teacher)})
    return EvalReport(srcc=prediction_srcc(predictions, labels), n=len(predictions), predictions=predictions,
                      config_hash='', checkpoint_id='teacher')


def load_labels(path) -> PredictionSet:
    """
    Labels from a PredictionSet file or from a labelled manifest
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f'label file not found: {path}')
    with path.open('r', encoding='utf-8') as handle:
        header = handle.readline().rstrip('\n').split('\t')
    if [h.strip() for h in header] == ['id', 'score']:
        return read_predictions(path)
    records = load_manifest(path)
    return PredictionSet({r.id: label for r, label in zip(records, labels_of(records))})


def ensemble(paths: Sequence, out_lo: float = 0.0, out_hi: float = 1.0, out_path=None,
             labels_path=None):
    """
    Rank-average the prediction files; returns (ensemble, SRCC against the
    labels or None)
    """
    if len(paths) < 2:
        raise ConfigError('an ensemble needs at least two prediction files')
    combined = rank_average_ensemble([read_predictions(p) for p in paths], out_lo, out_hi)
    if out_path is not None:
        write_predictions(combined, out_path)
    score = None
    if labels_path is not None:
        score = prediction_srcc(combined, load_labels(labels_path))
    return combined, score
