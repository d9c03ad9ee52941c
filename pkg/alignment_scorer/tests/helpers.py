import tempfile
from pathlib import Path

from alignment_scorer.autograd import finite_difference_grad, forward_backward, relative_error
from alignment_scorer.config import build_stage_config, model_preset


def gradient_error(fn, params, names=None, epsilon=1e-6) -> float:
    """
    Largest relative error between autograd and central differences of the
    scalar `fn(weights)`
    """
    _, analytic = forward_backward(fn, params)
    numeric = finite_difference_grad(lambda p: fn(p.as_tensors(track=False)).item(), params, epsilon, names)
    return relative_error({name: analytic[name] for name in numeric}, numeric)


def micro_model(**overrides):
    return model_preset('micro', **overrides)


def micro_stage(stage: int, data_root, **values):
    """
    A stage config small enough for the default suite
    """
    base = {'model_preset': 'micro', 'batch_size': 8, 'lr': 1e-2, 'epochs': 2, 'data_root': str(data_root)}
    if stage == 3:
        base['augment'] = {'freq_mask_width': 1, 'time_mask_width': 2}
    return build_stage_config(stage=stage, **{**base, **values})


class TempDirMixin:
    def setUp(self):
        super().setUp()
        handle = tempfile.TemporaryDirectory()
        self.addCleanup(handle.cleanup)
        self.tmp = Path(handle.name)
