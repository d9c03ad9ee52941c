from django.apps import AppConfig


class AlignmentScorerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'alignment_scorer'
    verbose_name = 'Audio-text alignment scorer'
