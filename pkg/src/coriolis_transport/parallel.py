"""Ordered thread-pool map that keeps the caller's context (and so its rotation convention)."""
from __future__ import annotations

import contextvars
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = contextvars.copy_context()

    def call(item: T) -> R:
        # a Context can only be entered by one thread at a time
        return ctx.copy().run(fn, item)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(call, items))
