"""Central-finite-difference gradient checking.

A central difference only measures a derivative where the function is
locally smooth. Networks with ReLU and max pooling have kinks, and a
probe that lands on one (a sign flip or an argmax change between the
two evaluation points) compares the analytic gradient against a slope
that does not exist. The checker therefore captures each layer's
discrete decisions per probe and skips coordinates whose decisions
differ between the plus and minus evaluations, after one retry at a
smaller step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: int
    skipped: int
    worst_name: str

    def __str__(self) -> str:
        return (
            f"max_rel_err={self.max_rel_err:.3e} checked={self.checked} "
            f"skipped={self.skipped} worst={self.worst_name}"
        )


def module_decisions(module):
    """Collect the discrete choices of every layer's last forward."""
    states = []
    for _, mod in module.named_modules():
        st = mod.decision_state()
        if st is not None:
            states.append(st)
    return states


def _same(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    loss_fn,
    triples,
    rng: np.random.Generator,
    n_coords: int | None = None,
    h: float = 1e-6,
    floor: float = 1e-6,
    decisions=None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    loss_fn re-runs the forward pass and returns a scalar loss; triples
    is a list of (name, values, analytic_grad) where values is mutated
    in place during probing. With n_coords None every coordinate is
    checked, otherwise that many are sampled per array. decisions, when
    given, is a zero-argument callable returning the decision state of
    the forward pass just run (see module_decisions).
    """
    max_rel = 0.0
    worst = ""
    checked = 0
    skipped = 0
    for name, values, grad in triples:
        if values.shape != grad.shape:
            raise ValueError(f"{name}: values {values.shape} vs grad {grad.shape}")
        flat = values.reshape(-1)
        gflat = grad.reshape(-1)
        if n_coords is None or n_coords >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        for i in coords:
            step = h * max(1.0, abs(flat[i]))
            orig = flat[i]
            fd = None
            for _ in range(2):
                flat[i] = orig + step
                lp = loss_fn()
                dp = decisions() if decisions is not None else None
                flat[i] = orig - step
                lm = loss_fn()
                dm = decisions() if decisions is not None else None
                flat[i] = orig
                if decisions is None or _same(dp, dm):
                    fd = (lp - lm) / (2 * step)
                    break
                step /= 8.0
            if fd is None:
                skipped += 1
                continue
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), floor)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{i}]"
    return GradCheckReport(max_rel, checked, skipped, worst)
