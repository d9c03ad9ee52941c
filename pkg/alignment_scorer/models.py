import uuid

from django.db import models


class StageRun(models.Model):
    STAGES = [
        ('init', 'Initialisation'),
        ('stage1', 'Stage 1: captioning pretraining'),
        ('stage2', 'Stage 2: pseudo-label ranking pretraining'),
        ('stage3', 'Stage 3: fine-tuning'),
    ]

    STATUSES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    stage = models.CharField(max_length=20, choices=STAGES)
    seed = models.BigIntegerField(default=0)
    config_hash = models.CharField(max_length=64, blank=True)
    init_checkpoint = models.CharField(max_length=500, blank=True)
    checkpoint_path = models.CharField(max_length=500, blank=True)
    checkpoint_id = models.CharField(max_length=16, blank=True)
    status = models.CharField(max_length=20, choices=STATUSES, default='running')
    final_loss = models.FloatField(null=True, blank=True)
    best_epoch = models.IntegerField(null=True, blank=True)
    error = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['stage', 'status', 'created_at'], name='alignment_s_stage_8d1f0e_idx'),
            models.Index(fields=['config_hash'], name='alignment_s_config__3b7c21_idx'),
        ]

    def __str__(self):
        return f"{self.get_stage_display()} - {self.status} - {self.created_at}"


class RunEvent(models.Model):
    run = models.ForeignKey(StageRun, on_delete=models.CASCADE, null=True, blank=True, related_name='events')
    epoch = models.IntegerField()
    split = models.CharField(max_length=20)
    metric = models.CharField(max_length=50)
    value = models.FloatField()
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'epoch', 'id']
        indexes = [
            models.Index(fields=['run', 'split', 'metric'], name='alignment_s_run_id_6a4c2f_idx'),
        ]

    def __str__(self):
        return f"epoch {self.epoch} {self.split}/{self.metric} = {self.value:.6g}"


class EvalRun(models.Model):
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    checkpoint_path = models.CharField(max_length=500)
    checkpoint_id = models.CharField(max_length=16)
    config_hash = models.CharField(max_length=64, blank=True)
    manifest = models.CharField(max_length=500)
    predictions_path = models.CharField(max_length=500, blank=True)
    split = models.CharField(max_length=20, blank=True)
    srcc = models.FloatField()
    n = models.IntegerField()
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['checkpoint_id', 'created_at'], name='alignment_s_checkpo_5e90a4_idx'),
        ]

    def __str__(self):
        return f"{self.checkpoint_id} on {self.manifest}: SRCC {self.srcc:.4f} (n={self.n})"
