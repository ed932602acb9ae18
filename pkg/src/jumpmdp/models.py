"""Built-in model catalog.

Models are registered builders keyed by name and configured purely by
numeric parameters, so experiment configs stay expression-free and worker
processes can rebuild any model from its (name, params) pair.
"""

from __future__ import annotations

import math

import numpy as np

from .jump_sde import ModelError, ModelSpec
from .mark_space import MarkMeasure

__all__ = ["MODEL_BUILDERS", "build_model"]


def scalar_benchmark(
    decay: float = 1.0,
    x0: float = 0.0,
    horizon: float = 1.0,
    mark: float = 1.0,
    weight: float = 1.0,
) -> ModelSpec:
    """d = 1, drift -decay*x, jump coefficient equal to the mark.

    With the unit atom this has constant linearized coefficients
    A1 = -decay and gain 1, so every closed form (Gramian, Lyapunov
    variance, terminal rates) is available for cross-checks.
    """
    decay = float(decay)
    measure = MarkMeasure.single_atom(mark, weight)

    def drift(x):
        return -decay * x

    def jump(x, y):
        return np.array([y])

    def drift_jac(x):
        return np.array([[-decay]])

    def jump_jac(x, y):
        return np.zeros((1, 1))

    return ModelSpec(
        dim=1,
        horizon=float(horizon),
        x0=np.array([float(x0)]),
        drift=drift,
        jump=jump,
        drift_jac=drift_jac,
        jump_jac=jump_jac,
        measure=measure,
        drift_lipschitz=abs(decay),
        jump_lipschitz=lambda y: 0.0,
        jump_envelope=lambda y: abs(y),
    )


def linear_gaussian(
    rate: float = 1.0,
    gain: float = 1.0,
    x0: float = 0.0,
    horizon: float = 1.0,
) -> ModelSpec:
    """d = 1, drift rate*x and jump gain*mark on a unit atom.

    The linearization has A1 = rate and gain |gain|, matching the scalar
    closed forms W(T) = gain^2 (e^{2 rate T} - 1) / (2 rate).
    """
    rate = float(rate)
    gain = float(gain)
    measure = MarkMeasure.single_atom(1.0, 1.0)
    return ModelSpec(
        dim=1,
        horizon=float(horizon),
        x0=np.array([float(x0)]),
        drift=lambda x: rate * x,
        jump=lambda x, y: np.array([gain * y]),
        drift_jac=lambda x: np.array([[rate]]),
        jump_jac=lambda x, y: np.zeros((1, 1)),
        measure=measure,
    )


def two_d_benchmark(
    horizon: float = 1.0,
    coupling: float = 0.25,
    wobble: float = 0.5,
) -> ModelSpec:
    """d = 2 benchmark with state-dependent jump coefficient.

    Two mark atoms make the jump functions y and y^2 independent in the
    mark space, so the orthonormal frame has full rank and the gain matrix
    varies along the fluid path through the sin term.
    """
    measure = MarkMeasure.from_atoms([(1.0, 1.0), (2.0, 0.5)])
    m = np.array([[-1.0, coupling], [0.0, -0.5]])

    def drift(x):
        return m @ x

    def jump(x, y):
        return np.array([y * (1.0 + wobble * math.sin(x[0])), y * y])

    def drift_jac(x):
        return m

    def jump_jac(x, y):
        return np.array([[y * wobble * math.cos(x[0]), 0.0], [0.0, 0.0]])

    return ModelSpec(
        dim=2,
        horizon=float(horizon),
        x0=np.array([0.2, -0.1]),
        drift=drift,
        jump=jump,
        drift_jac=drift_jac,
        jump_jac=jump_jac,
        measure=measure,
    )


def rank_deficient_2d(horizon: float = 1.0, factor: float = 2.0) -> ModelSpec:
    """d = 2 with proportional jump components; the frame has rank one."""
    measure = MarkMeasure.single_atom(1.0, 1.0)

    def jump(x, y):
        return np.array([y, factor * y])

    return ModelSpec(
        dim=2,
        horizon=float(horizon),
        x0=np.zeros(2),
        drift=lambda x: -x,
        jump=jump,
        drift_jac=lambda x: -np.eye(2),
        jump_jac=lambda x, y: np.zeros((2, 2)),
        measure=measure,
    )


def pure_jump(
    dim: int = 1,
    horizon: float = 1.0,
    mark: float = 1.0,
    weight: float = 1.0,
) -> ModelSpec:
    """No drift; each event shifts every component by eps*mark."""
    d = int(dim)
    measure = MarkMeasure.single_atom(mark, weight)
    return ModelSpec(
        dim=d,
        horizon=float(horizon),
        x0=np.zeros(d),
        drift=lambda x: np.zeros(d),
        jump=lambda x, y: np.full(d, y),
        drift_jac=lambda x: np.zeros((d, d)),
        jump_jac=lambda x, y: np.zeros((d, d)),
        measure=measure,
    )


MODEL_BUILDERS = {
    "scalar_benchmark": scalar_benchmark,
    "linear_gaussian": linear_gaussian,
    "two_d_benchmark": two_d_benchmark,
    "rank_deficient_2d": rank_deficient_2d,
    "pure_jump": pure_jump,
}


def build_model(name: str, params: dict | None = None) -> ModelSpec:
    if name not in MODEL_BUILDERS:
        raise ModelError(
            f"unknown model {name!r}; available: {sorted(MODEL_BUILDERS)}"
        )
    return MODEL_BUILDERS[name](**(params or {}))
