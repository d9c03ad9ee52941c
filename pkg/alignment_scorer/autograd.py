"""
Gradient evaluation over a ParamSet, and the central-difference oracle the
tests hold it against.
"""
import logging
from typing import Callable, Dict, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import NonFiniteError, ShapeError
from .optim import ParamSet
from .tensor import Tensor

logger = logging.getLogger(__name__)


def forward_backward(graph_fn: Callable[..., Tensor], params: ParamSet, inputs: Sequence = ()):
    """
    Run `graph_fn(weights, *inputs)` where `weights` maps parameter names to
    leaf tensors, then differentiate the scalar it returns.

    Returns (loss value, {name: gradient}) with one entry per trainable
    parameter; parameters the loss never touched get zeros.
    """
    weights = params.as_tensors()
    loss = graph_fn(weights, *inputs)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError('graph_fn must return a scalar tensor')
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteError('loss')
    loss.backward()
    grads: Dict[str, np.ndarray] = {}
    for name in params.trainable_names():
        leaf = weights[name]
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f'gradient of {name}')
        grads[name] = grad
    return value, grads


def finite_difference_grad(scalar_fn: Callable[[ParamSet], float], params: ParamSet,
                           epsilon: float = 1e-6, names: Iterable[str] = None) -> Dict[str, np.ndarray]:
    """
    Central-difference estimate (f(p + e) - f(p - e)) / 2e for every entry of
    every trainable parameter (or of `names` only)
    """
    if epsilon <= 0:
        raise ValueError('epsilon must be positive')
    work = params.copy()
    selected = list(names) if names is not None else work.trainable_names()
    estimate = {}
    for name in selected:
        array = work[name]
        grad = np.zeros_like(array, dtype=np.float64)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + epsilon
            upper = float(scalar_fn(work))
            array[index] = original - epsilon
            lower = float(scalar_fn(work))
            array[index] = original
            grad[index] = (upper - lower) / (2.0 * epsilon)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f'finite difference of {name}')
        estimate[name] = grad
    return estimate


def relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray],
                   floor: float = 1e-8) -> float:
    """
    Largest per-parameter ||a - n|| / max(||a||, ||n||, floor)
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), floor)
        worst = max(worst, float(np.linalg.norm(a - n)) / scale)
    return worst
