"""Selects the numeric core: compiled extension if built, numpy otherwise.

Set ``GRADSIGN_PURE_PYTHON=1`` to force the fallback.  ``use_core`` swaps the
active core at runtime (the kernel benchmark and cross-core tests rely on it).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _pycore

try:
    from . import _ccore
except ImportError:  # extension not built
    _ccore = None

_CORES = {"python": _pycore}
if _ccore is not None:
    _CORES["compiled"] = _ccore

if os.environ.get("GRADSIGN_PURE_PYTHON", "") not in ("", "0"):
    _active = _pycore
else:
    _active = _ccore if _ccore is not None else _pycore


def core() -> object:
    return _active


def core_name() -> str:
    return _active.NAME


def available_cores() -> tuple[str, ...]:
    return tuple(sorted(_CORES))


def set_core(name: str) -> None:
    global _active
    if name not in _CORES:
        raise ValueError(f"core {name!r} unavailable (have {available_cores()})")
    _active = _CORES[name]


@contextmanager
def use_core(name: str):
    previous = core_name()
    set_core(name)
    try:
        yield
    finally:
        set_core(previous)
