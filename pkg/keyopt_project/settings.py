"""
Django settings for keyopt_project project.

The project has no web surface: Django provides settings, the management
command line, the run registry database and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from dotenv import load_dotenv
import os
import dj_database_url

load_dotenv()


def env_bool(name, default=False):
    return os.getenv(name, str(default)).lower() in {"1", "true", "yes", "on"}


def env_int(name, default):
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        raise RuntimeError(f"{name} must be an integer, got {raw!r}.")


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

LOCAL_SECRET_KEY = 'keyopt-local-only-secret'

DEBUG = env_bool("DEBUG", False)

# Nothing is signed or served; the key only satisfies Django's startup checks.
SECRET_KEY = os.getenv("SECRET_KEY") or LOCAL_SECRET_KEY

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'keyopt',
]

MIDDLEWARE = []


# Run registry database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASE_URL = os.environ.get("DATABASE_URL") or f"sqlite:///{BASE_DIR / 'db.sqlite3'}"

DATABASES = {
    "default": dj_database_url.parse(
        DATABASE_URL,
        conn_max_age=0,
    )
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Keypoint toolkit

KEYOPT_THREADS = max(1, env_int("KEYOPT_THREADS", 1))

KEYOPT_OUTPUT_DIR = Path(os.getenv("KEYOPT_OUTPUT_DIR", str(BASE_DIR / "runs")))

KEYOPT_LOG_LEVEL = os.getenv("KEYOPT_LOG_LEVEL", "INFO").upper()


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "keyopt": {
            "handlers": ["console"],
            "level": KEYOPT_LOG_LEVEL,
            "propagate": False,
        },
    },
}


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
