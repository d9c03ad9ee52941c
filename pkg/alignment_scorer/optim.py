"""
Named parameter sets and the AdamW optimizer.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, Mapping, Tuple

import numpy as np

from .config import AdamWConfig
from .exceptions import ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class ParamSet:
    """
    Ordered map from dotted parameter path to array, with a trainable flag
    per parameter. Treat instances as values: updates return new sets that
    share the arrays they did not touch.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] = None, frozen: Iterable[str] = ()):
        self._arrays: Dict[str, np.ndarray] = {}
        self._frozen = set()
        frozen = set(frozen)
        for name, array in (arrays or {}).items():
            self.add(name, array, trainable=name not in frozen)

    def add(self, name: str, array, trainable: bool = True):
        if name in self._arrays:
            raise ShapeError(f'duplicate parameter name {name!r}')
        self._arrays[name] = np.asarray(array)
        if not trainable:
            self._frozen.add(name)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list:
        return list(self._arrays)

    def is_trainable(self, name: str) -> bool:
        return name in self._arrays and name not in self._frozen

    def trainable_names(self) -> list:
        return [n for n in self._arrays if n not in self._frozen]

    def frozen_names(self) -> list:
        return [n for n in self._arrays if n in self._frozen]

    def with_trainable(self, groups: Iterable[str], always_frozen: Iterable[str] = ()) -> 'ParamSet':
        """
        Copy whose trainable parameters are exactly those under `groups`
        (first path component), minus anything under `always_frozen`
        """
        groups, blocked = set(groups), set(always_frozen)
        out = ParamSet()
        for name, array in self._arrays.items():
            head = name.split('.', 1)[0]
            out.add(name, array, trainable=head in groups and head not in blocked)
        return out

    def with_arrays(self, updates: Mapping[str, np.ndarray]) -> 'ParamSet':
        out = ParamSet()
        for name, array in self._arrays.items():
            out.add(name, updates.get(name, array), trainable=name not in self._frozen)
        for name in updates:
            if name not in self._arrays:
                raise ShapeError(f'unknown parameter {name!r}')
        return out

    def merged(self, other: 'ParamSet') -> 'ParamSet':
        out = self.copy(deep=False)
        for name, array in other.items():
            out.add(name, array, trainable=other.is_trainable(name))
        return out

    def copy(self, deep: bool = True) -> 'ParamSet':
        out = ParamSet()
        for name, array in self._arrays.items():
            out.add(name, array.copy() if deep else array, trainable=name not in self._frozen)
        return out

    def astype(self, dtype) -> 'ParamSet':
        out = ParamSet()
        for name, array in self._arrays.items():
            cast = array if array.dtype == dtype else array.astype(dtype)
            out.add(name, cast, trainable=name not in self._frozen)
        return out

    def as_tensors(self, track: bool = True) -> Dict[str, Tensor]:
        """
        Leaf tensors for a forward pass; trainable ones record gradients
        when `track` is set
        """
        return {
            name: Tensor(array, requires_grad=track and name not in self._frozen, name=name,
                         dtype=array.dtype)
            for name, array in self._arrays.items()
        }

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: array.shape for name, array in self._arrays.items()}


@dataclass
class AdamWState:
    hparams: AdamWConfig
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def init_adamw(params: ParamSet, hparams: AdamWConfig = None) -> AdamWState:
    hparams = hparams or AdamWConfig()
    state = AdamWState(hparams=hparams)
    for name in params.trainable_names():
        state.first_moment[name] = np.zeros_like(params[name])
        state.second_moment[name] = np.zeros_like(params[name])
    return state


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return dict(grads)
    scale = max_norm / total
    logger.debug(f'Clipping gradient norm {total:.4g} to {max_norm}')
    return {name: g * scale for name, g in grads.items()}


def adamw_step(params: ParamSet, grads: Mapping[str, np.ndarray], state: AdamWState):
    """
    One decoupled-weight-decay Adam update. Returns (new params, new state);
    frozen parameters are passed through as the very same arrays.
    """
    trainable = params.trainable_names()
    if set(grads) != set(trainable):
        missing = sorted(set(trainable) - set(grads))
        extra = sorted(set(grads) - set(trainable))
        raise ShapeError(f'gradients must cover exactly the trainable parameters '
                         f'(missing {missing}, unexpected {extra})')
    hp = state.hparams
    step = state.step + 1
    bias1 = 1.0 - hp.beta1 ** step
    bias2 = 1.0 - hp.beta2 ** step
    decay = 1.0 - hp.lr * hp.weight_decay
    updates, first, second = {}, {}, {}
    for name in trainable:
        p, g = params[name], np.asarray(grads[name])
        if g.shape != p.shape:
            raise ShapeError(f'gradient for {name} has shape {g.shape}, parameter has {p.shape}')
        m_prev = state.first_moment.get(name)
        v_prev = state.second_moment.get(name)
        if m_prev is None or m_prev.shape != p.shape or v_prev.shape != p.shape:
            raise ShapeError(f'optimizer state for {name} does not match its parameter')
        m = hp.beta1 * m_prev + (1.0 - hp.beta1) * g
        v = hp.beta2 * v_prev + (1.0 - hp.beta2) * g * g
        step_dir = (m / bias1) / (np.sqrt(v / bias2) + hp.eps)
        updates[name] = (p * decay - hp.lr * step_dir).astype(p.dtype, copy=False)
        first[name], second[name] = m, v
    new_state = AdamWState(hparams=hp, step=step, first_moment=first, second_moment=second)
    return params.with_arrays(updates), new_state
