"""Иерархия ошибок тулкита.

Два корневых вида определяют код выхода CLI: ошибки входных данных (2) и
численные сбои (3). Конкретные классы живут рядом с кодом, который их бросает.
"""


class EnvtrackError(Exception):
    pass


class InputValidationError(EnvtrackError, ValueError):
    """Входные данные не проходят контракт операции (формат, диапазон, длина)."""


class NumericFailure(EnvtrackError, ArithmeticError):
    """Вычисление не определено на корректных по форме данных.

    Нулевая дисперсия, вырожденная система уравнений и т.п.
    """
