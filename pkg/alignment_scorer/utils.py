import json
import logging
from pathlib import Path
from typing import List, Optional

from django.utils import timezone

logger = logging.getLogger(__name__)


class RunLogger:
    """
    Append-only JSON-lines metric log: one {epoch, split, metric, value}
    object per line, sorted keys, no timestamps. With `run` set, every record
    is also stored as a RunEvent row.
    """

    def __init__(self, path=None, run=None, fresh: bool = True):
        self.path = Path(path) if path else None
        self.run = run
        self.records: List[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if fresh:
                self.path.write_text('', encoding='utf-8')

    def log(self, epoch: int, split: str, metric: str, value: float) -> dict:
        record = {'epoch': int(epoch), 'split': split, 'metric': metric, 'value': float(value)}
        self.records.append(record)
        if self.path is not None:
            with self.path.open('a', encoding='utf-8') as handle:
                handle.write(json.dumps(record, sort_keys=True) + '\n')
        logger.info(f"epoch {epoch} {split}/{metric} = {value:.6g}")
        if self.run is not None:
            log_event(self.run, epoch, split, metric, value)
        return record

    def values(self, split: str, metric: str) -> List[float]:
        return [r['value'] for r in self.records if r['split'] == split and r['metric'] == metric]


def read_run_log(path) -> List[dict]:
    lines = Path(path).read_text(encoding='utf-8').splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def log_event(run, epoch: int, split: str, metric: str, value: float):
    """
    Store one metric record as a RunEvent row
    """
    try:
        from .models import RunEvent
        RunEvent.objects.create(run=run, epoch=epoch, split=split, metric=metric, value=value)
    except Exception as e:
        logger.error(f"Failed to record run event: {e}")


def start_stage_run(stage: str, seed: int = 0, config_hash: str = '', init_checkpoint: str = ''):
    """
    Open a StageRun row; returns None when the database is unavailable
    """
    try:
        from .models import StageRun
        run = StageRun.objects.create(stage=stage, seed=seed, config_hash=config_hash,
                                      init_checkpoint=init_checkpoint or '')
        logger.info(f"Stage run started: {stage} ({run.id})")
        return run
    except Exception as e:
        logger.error(f"Failed to record stage run: {e}")
        return None


def finish_stage_run(run, status: str, checkpoint_path: str = '', checkpoint_id: str = '',
                     final_loss: Optional[float] = None, best_epoch: Optional[int] = None, error: str = '',
                     config_hash: str = ''):
    if run is None:
        return
    try:
        if config_hash:
            run.config_hash = config_hash
        run.status = status
        run.checkpoint_path = str(checkpoint_path or '')
        run.checkpoint_id = checkpoint_id
        run.final_loss = final_loss
        run.best_epoch = best_epoch
        run.error = error
        run.finished_at = timezone.now()
        run.save()
    except Exception as e:
        logger.error(f"Failed to update stage run {run.id}: {e}")


def record_eval_run(report, checkpoint_path: str, manifest: str, predictions_path: str = '', split: str = ''):
    try:
        from .models import EvalRun
        return EvalRun.objects.create(
            checkpoint_path=str(checkpoint_path),
            checkpoint_id=report.checkpoint_id,
            config_hash=report.config_hash,
            manifest=str(manifest),
            predictions_path=str(predictions_path or ''),
            split=split,
            srcc=report.srcc,
            n=report.n,
        )
    except Exception as e:
        logger.error(f"Failed to record evaluation: {e}")
        return None
