"""
Исключения лаборатории и коды выхода CLI
"""

import logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4


class LabError(Exception):
    """Базовая ошибка лаборатории"""

    exit_code = EXIT_SOLVER

    def __init__(self, message: str, stage: str = None, **details):
        super().__init__(message)
        self.message = message
        self.stage = stage
        self.details = details

    def with_stage(self, stage: str) -> 'LabError':
        if self.stage is None:
            self.stage = stage
        return self

    def to_dict(self) -> dict:
        return {
            'type': type(self).__name__,
            'message': self.message,
            'stage': self.stage,
            'details': {k: _plain(v) for k, v in self.details.items()},
        }

    def __str__(self):
        prefix = f"[{self.stage}] " if self.stage else ""
        return f"{prefix}{self.message}"


class ConfigError(LabError):
    """Нарушение схемы конфигурации или отклонённая метрика"""
    exit_code = EXIT_CONFIG


class ResourceError(LabError):
    """Превышен ресурсный лимит (word cap, размер шара)"""
    exit_code = EXIT_CONFIG


class GeometryError(LabError):
    """Точка слишком близко к границе диска или отказ редукции"""
    exit_code = EXIT_SOLVER


class SolverError(LabError):
    exit_code = EXIT_SOLVER


class IntegrationError(SolverError):
    pass


class BVPError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class IndependenceError(SolverError):
    """Значение зависит от выбора базовой точки сильнее допуска"""


class ExhaustivenessError(SolverError):
    """Нельзя доказать полноту перечисления классов"""


def _plain(value):
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, 'tolist'):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
