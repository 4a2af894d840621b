"""Rotation direction of the velocity along characteristics.

The momentum equation ``u_t + u u_x + v u_y - l v = 0``, ``v_t + ... + l u = 0``
gives ``du/dt = +l v`` and ``dv/dt = -l u`` along a characteristic, i.e. the
velocity turns clockwise.  The closed-form velocities ``q1 = u0 cos lt - v0 sin lt``,
``q2 = v0 cos lt + u0 sin lt`` used in the kernel representation turn the other
way.  Both are selectable here; every closed form in the package reads the
active choice through :func:`rotation_rate`.
"""
from __future__ import annotations

import contextlib
import contextvars
import enum
from typing import Iterator


class RotationConvention(enum.Enum):
    MAIN1 = "main1-derived"
    PAPER_Q = "paper-q"

    @property
    def sign(self) -> int:
        return 1 if self is RotationConvention.MAIN1 else -1

    @classmethod
    def parse(cls, value: "str | RotationConvention") -> "RotationConvention":
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name, member.name.lower()):
                return member
        raise ValueError(f"unknown rotation convention {value!r}")


DEFAULT_CONVENTION = RotationConvention.MAIN1

_active: contextvars.ContextVar[RotationConvention] = contextvars.ContextVar(
    "rotation_convention", default=DEFAULT_CONVENTION
)


def active_convention() -> RotationConvention:
    return _active.get()


@contextlib.contextmanager
def use_convention(convention: "str | RotationConvention") -> Iterator[RotationConvention]:
    """Temporarily switch the rotation convention for the current context."""
    token = _active.set(RotationConvention.parse(convention))
    try:
        yield _active.get()
    finally:
        _active.reset(token)


def rotation_rate(l: float) -> float:
    """Signed angular rate ``omega`` with ``du/dt = omega v``, ``dv/dt = -omega u``."""
    return active_convention().sign * l
