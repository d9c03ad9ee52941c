import os
from pathlib import Path
from decouple import config
from dotenv import load_dotenv
import dj_database_url

# Load environment variables from .env file
load_dotenv(os.path.join(os.path.dirname(os.path.abspath(__file__)), '.env'))

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent

SECRET_KEY = config('SECRET_KEY', default='alignscore-local-only')
DEBUG = config('DEBUG', default=False, cast=bool)
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'alignment_scorer',
]

MIDDLEWARE = []

# Database configuration (run bookkeeping only; artefacts live on disk)
DATABASES = {
    'default': dj_database_url.config(
        default=config('DATABASE_URL', default=f"sqlite:///{BASE_DIR / 'alignscore.sqlite3'}"),
        conn_max_age=600,
    )
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Alignment scorer settings
ALIGNSCORE_DATA_ROOT = Path(config('ALIGNSCORE_DATA_ROOT', default=str(BASE_DIR / 'data')))
ALIGNSCORE_INFERENCE_WORKERS = config('ALIGNSCORE_INFERENCE_WORKERS', default=1, cast=int)
ALIGNSCORE_SLOW_TESTS = config('ALIGNSCORE_SLOW_TESTS', default=False, cast=bool)
ALIGNSCORE_LOG_LEVEL = config('ALIGNSCORE_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'alignment_scorer': {
            'handlers': ['console'],
            'level': ALIGNSCORE_LOG_LEVEL,
        },
    },
}

# Index stage runs, evaluations and metric events in the database
ALIGNSCORE_RECORD_RUNS = config('ALIGNSCORE_RECORD_RUNS', default=True, cast=bool)
