from django.db import migrations, models
import django.db.models.deletion
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='StageRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('stage', models.CharField(choices=[('init', 'Initialisation'), ('stage1', 'Stage 1: captioning pretraining'), ('stage2', 'Stage 2: pseudo-label ranking pretraining'), ('stage3', 'Stage 3: fine-tuning')], max_length=20)),
                ('seed', models.BigIntegerField(default=0)),
                ('config_hash', models.CharField(blank=True, max_length=64)),
                ('init_checkpoint', models.CharField(blank=True, max_length=500)),
                ('checkpoint_path', models.CharField(blank=True, max_length=500)),
                ('checkpoint_id', models.CharField(blank=True, max_length=16)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=20)),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('best_epoch', models.IntegerField(blank=True, null=True)),
                ('error', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['stage', 'status', 'created_at'], name='alignment_s_stage_8d1f0e_idx'), models.Index(fields=['config_hash'], name='alignment_s_config__3b7c21_idx')],
            },
        ),
        migrations.CreateModel(
            name='EvalRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('checkpoint_path', models.CharField(max_length=500)),
                ('checkpoint_id', models.CharField(max_length=16)),
                ('config_hash', models.CharField(blank=True, max_length=64)),
                ('manifest', models.CharField(max_length=500)),
                ('predictions_path', models.CharField(blank=True, max_length=500)),
                ('split', models.CharField(blank=True, max_length=20)),
                ('srcc', models.FloatField()),
                ('n', models.IntegerField()),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['checkpoint_id', 'created_at'], name='alignment_s_checkpo_5e90a4_idx')],
            },
        ),
        migrations.CreateModel(
            name='RunEvent',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.IntegerField()),
                ('split', models.CharField(max_length=20)),
                ('metric', models.CharField(max_length=50)),
                ('value', models.FloatField()),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name='events', to='alignment_scorer.stagerun')),
            ],
            options={
                'ordering': ['run', 'epoch', 'id'],
                'indexes': [models.Index(fields=['run', 'split', 'metric'], name='alignment_s_run_id_6a4c2f_idx')],
            },
        ),
    ]
