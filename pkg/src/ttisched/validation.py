"""Small argument checkers shared by the estimators, simulator and CLI."""

from numbers import Integral, Real

from .exceptions import InvalidInputError
from .model import Instance


def check_instance(obj) -> Instance:
    if not isinstance(obj, Instance):
        raise InvalidInputError(f"expected an Instance, got {type(obj).__name__}")
    return obj


def check_probability(value, name: str) -> float:
    if not isinstance(value, Real) or not 0.0 <= float(value) <= 1.0:
        raise InvalidInputError(f"{name} must be a probability in [0, 1], got {value!r}")
    return float(value)


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral) or value < minimum:
        raise InvalidInputError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_tti(instance: Instance, tti) -> int:
    if tti not in instance.tti_menu:
        raise InvalidInputError(f"TTI length {tti} not in menu {instance.tti_menu}")
    return int(tti)
