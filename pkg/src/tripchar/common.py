from __future__ import annotations

import enum


class Orientation(str, enum.Enum):
    """Which side of the trip point passes.

    ``PASS_BELOW_FAIL``: pass region below fail region (e.g. clock frequency).
    ``PASS_ABOVE_FAIL``: pass region above fail region (e.g. a strobe delay).
    """

    PASS_BELOW_FAIL = "PassBelowFail"
    PASS_ABOVE_FAIL = "PassAboveFail"


class Objective(str, enum.Enum):
    MINIMIZE = "Minimize"
    MAXIMIZE = "Maximize"


def parse_enum(cls, value):
    if isinstance(value, cls):
        return value
    for member in cls:
        if value in (member.value, member.name) or str(value).lower() == member.value.lower():
            return member
    raise ValueError(f"unknown {cls.__name__}: {value!r} (expected one of {[m.value for m in cls]})")
