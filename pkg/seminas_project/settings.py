"""
Django settings for seminas_project project.
"""

from pathlib import Path
from decouple import config, Csv
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Nothing is served over HTTP; the key only satisfies Django's startup checks.
SECRET_KEY = config('SECRET_KEY', default='django-insecure-seminas-local-experiments-only')

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost,127.0.0.1', cast=Csv())


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'search',
]

# The engine keeps no state in a database.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Experiments

# Offsets every configured seed, used to shard CI runs.
SEMINAS_SEED_OFFSET = config('SEMINAS_SEED_OFFSET', default=0, cast=int)

SEMINAS_DEFAULT_SEEDS = config('SEMINAS_DEFAULT_SEEDS', default=20, cast=int)

SEMINAS_OUTPUT_DIR = config('SEMINAS_OUTPUT_DIR', default=str(BASE_DIR / 'results'))

SEMINAS_JOBS = config('SEMINAS_JOBS', default=1, cast=int)

REST_FRAMEWORK = {
    'COERCE_DECIMAL_TO_STRING': False,
    'UNAUTHENTICATED_USER': None,
}


# Logging

LOG_LEVEL = config('LOG_LEVEL', default='INFO')
LOG_DIR = config('LOG_DIR', default='')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose'
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'search': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

if LOG_DIR:
    Path(LOG_DIR).mkdir(parents=True, exist_ok=True)
    LOGGING['handlers']['file'] = {
        'class': 'logging.FileHandler',
        'filename': str(Path(LOG_DIR) / 'search.log'),
        'formatter': 'verbose'
    }
    LOGGING['root']['handlers'].append('file')
    LOGGING['loggers']['search']['handlers'].append('file')
