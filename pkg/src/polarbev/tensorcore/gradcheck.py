"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericalError
from . import kinks
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    checked: int
    excluded: int
    worst: tuple[int, int] | None = None
    per_leaf: list[float] = field(default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} checked={self.checked} "
                f"excluded={self.excluded}")


def _scalar(t: Tensor, where: str) -> float:
    value = float(np.asarray(t.data).reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericalError(f"non-finite objective {value} {where}")
    return value


def grad_check(f: Callable[[], Tensor], leaves: Sequence[Tensor], step: float = 1e-4,
               tol: float = 1e-3, floor: float = 1e-6,
               names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` must read the leaves' ``data`` arrays, which are perturbed in
    place one element at a time. The relative error of an element is
    ``|a - n| / max(|a|, |n|, floor)``; elements whose two probes land on
    different sides of a kink are excluded from the comparison.
    """
    names = list(names) if names is not None else [t.name or f"leaf{i}" for i, t in enumerate(leaves)]
    for leaf in leaves:
        leaf.grad = None
    with Tape() as tape, kinks.monitor() as base:
        out = f()
        _scalar(out, f"at the unperturbed point (operands {', '.join(names)})")
    tape.backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    worst_err, worst = 0.0, None
    checked = excluded = 0
    per_leaf = []
    for li, leaf in enumerate(leaves):
        flat = leaf.data.reshape(-1)
        leaf_err = 0.0
        for k in range(flat.size):
            orig = flat[k]
            where = f"(operand {names[li]}, element {k})"
            try:
                flat[k] = orig + step
                with kinks.monitor() as kp:
                    fp = _scalar(f(), where)
                flat[k] = orig - step
                with kinks.monitor() as km:
                    fm = _scalar(f(), where)
            finally:
                flat[k] = orig
            if not (kinks.same_branches(kp, km) and kinks.same_branches(kp, base)):
                excluded += 1
                continue
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic[li].reshape(-1)[k])
            if not np.isfinite(a):
                raise NumericalError(f"non-finite analytic gradient {where}")
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            checked += 1
            leaf_err = max(leaf_err, err)
            if err > worst_err:
                worst_err, worst = err, (li, k)
        per_leaf.append(leaf_err)
    return GradCheckReport(worst_err, worst_err <= tol, checked, excluded, worst, per_leaf)
