"""Records the branch pattern of non-smooth ops during a forward pass.

Finite differences are meaningless when the two probes straddle a kink
(relu at 0, a bilinear cell boundary, a clamp edge). Ops call :func:`note`
with the discrete pattern that selects their local branch; the gradient
checker compares patterns between probes and skips straddling elements.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_local = threading.local()


def _log():
    return getattr(_local, "log", None)


def note(tag: str, pattern: np.ndarray) -> None:
    log = _log()
    if log is not None:
        log.append((tag, np.array(pattern, copy=True)))


@contextmanager
def monitor():
    prev = _log()
    log: list[tuple[str, np.ndarray]] = []
    _local.log = log
    try:
        yield log
    finally:
        _local.log = prev


def same_branches(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    for (ta, pa), (tb, pb) in zip(a, b):
        if ta != tb or pa.shape != pb.shape or not np.array_equal(pa, pb):
            return False
    return True
