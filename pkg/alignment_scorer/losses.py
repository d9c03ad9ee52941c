"""
Training objectives: top-1 ListNet over a score list, and masked next-token
cross-entropy for captioning.
"""
import logging

import numpy as np

from .exceptions import ListError, MaskError, ShapeError
from .tensor import Tensor, as_tensor, log_softmax

logger = logging.getLogger(__name__)


def target_distribution(target, temperature: float = 1.0) -> np.ndarray:
    scaled = np.asarray(target, dtype=np.float64) / temperature
    shifted = np.exp(scaled - scaled.max())
    return shifted / shifted.sum()


def listnet_loss(pred: Tensor, target, temperature: float = 1.0) -> Tensor:
    """
    L = -sum_i softmax(target / temperature)_i * log_softmax(pred)_i

    `pred` is a 1-D tensor of predicted scores, `target` the aligned labels.
    """
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.ndim != 1 or target.ndim != 1:
        raise ListError(f'ListNet takes flat score lists, got {pred.shape} and {target.shape}')
    if pred.shape[0] != target.shape[0]:
        raise ListError(f'prediction list has {pred.shape[0]} entries, target list {target.shape[0]}')
    if pred.shape[0] < 2:
        raise ListError('ListNet needs a list of at least 2 scores')
    weights = target_distribution(target, temperature).astype(pred.dtype)
    return -(log_softmax(pred) * weights).sum()


def next_token_cross_entropy(logits: Tensor, targets, loss_mask) -> Tensor:
    """
    Mean negative log-likelihood of `targets` at the positions selected by
    `loss_mask`. Row i of `logits` predicts targets[i]; unmasked targets are
    ignored and may hold any placeholder.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(loss_mask, dtype=bool)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],) or mask.shape != targets.shape:
        raise ShapeError(f'logits {logits.shape}, targets {targets.shape} and mask {mask.shape} do not align')
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise MaskError('loss mask selects no positions')
    chosen = targets[rows]
    if chosen.min() < 0 or chosen.max() >= logits.shape[1]:
        raise ShapeError(f'target ids outside a vocabulary of {logits.shape[1]}')
    log_probs = log_softmax(logits[rows])
    return -log_probs[np.arange(rows.size), chosen].mean()
