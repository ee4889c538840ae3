"""
Django settings for grid_reliability project.

관리 명령(manage.py)으로만 구동되는 배치 프로젝트입니다.
웹 요청/DB를 쓰지 않으므로 미들웨어, 템플릿, 데이터베이스 설정이 없습니다.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# 요청을 처리하지 않으므로 서명 용도로만 존재
SECRET_KEY = "grid-reliability-batch-only"

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Custom apps
    "grid",
    "sampling",
    "bench",
    "runner",
]

# 결과는 CSV 파일로만 기록
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = "ko-kr"

TIME_ZONE = "Asia/Seoul"

USE_I18N = True

USE_TZ = True


# 추정기 기본값 (CLI 플래그 / 설정 파일이 우선)
GRID_RELIABILITY = {
    "BATCH_SIZE": 32,
    # None 이면 min(1e-3, 1/(10J))
    "EPSILON": None,
    "ETA0": 1.0,
    "SIGMA_SCALE": 0.25,
    # 스텝 크기의 Π 대체값: "union"(ΣΠᵢ) 또는 "estimate"(누적 Π̂)
    "PI_PROXY": "union",
    "MC_CHUNK": 32768,
    "SCHEDULE_START": 64,
    "SCHEDULE_CAP": 2**22,
    "REFERENCE_SAMPLES": 100_000,
    "RUNS": 1,
    "WORKERS": 1,
    # 17 유효숫자, 지수 표기
    "FLOAT_FORMAT": "%.16e",
    "CASE_DIR": BASE_DIR / "grid" / "fixtures" / "cases",
}

# 로깅 설정 (모두 stderr, 데이터는 파일로만)
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        "grid": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": True,
        },
        "sampling": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": True,
        },
        "bench": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": True,
        },
        "runner": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": True,
        },
    },
}
