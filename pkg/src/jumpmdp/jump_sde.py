"""Small-noise jump SDE paths, their fluid limit, and centered fluctuations.

The state follows drift b between events and jumps by eps * G(x(s-), y) at
each event (s, y) of a Poisson random measure with intensity (1/eps) * nu x dt.
Drift segments are advanced with classical RK4; events are applied at their
exact times rather than binned to the grid, which removes the O(dt) jump
placement bias that would otherwise pollute slope estimates at small eps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .mark_space import MarkMeasure
from .prm import ControlField, CostReport, PointRealization, sample_controlled_measure, tilt_cost

__all__ = [
    "ModelError",
    "ModelSpec",
    "ScalingSchedule",
    "PathGrid",
    "rk4_step",
    "simulate_jump_path",
    "fluid_limit",
    "centered_fluctuation",
    "simulate_controlled_path",
    "JumpAudit",
]


class ModelError(ValueError):
    """Invalid model data or incompatible inputs."""


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the jump SDE and their derivatives.

    drift(x) -> (d,), jump(x, y) -> (d,) for a mark y, drift_jac(x) -> (d, d),
    jump_jac(x, y) -> (d, d).  The optional bound witnesses (a Lipschitz
    constant for the drift and mark envelopes for the jump coefficient) are
    advisory metadata; nothing enforces them.
    """

    dim: int
    horizon: float
    x0: np.ndarray
    drift: Callable
    jump: Callable
    drift_jac: Callable
    jump_jac: Callable
    measure: MarkMeasure
    drift_lipschitz: float | None = None
    jump_lipschitz: Callable | None = None
    jump_envelope: Callable | None = None

    def __post_init__(self) -> None:
        x0 = np.asarray(self.x0, dtype=float).ravel()
        if x0.shape != (self.dim,):
            raise ModelError(f"x0 must have shape ({self.dim},)")
        if self.horizon <= 0:
            raise ModelError("horizon must be positive")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    def atom_marks(self) -> list:
        return [self.measure.atom(k) for k in range(self.measure.n_atoms)]

    def compensator(self, x: np.ndarray) -> np.ndarray:
        """Mean jump drift at state x: sum_k G(x, y_k) w_k."""
        w = self.measure.weights
        out = np.zeros(self.dim)
        for k in range(self.measure.n_atoms):
            out += w[k] * np.asarray(self.jump(x, self.measure.atom(k)), dtype=float)
        return out

    def validate_derivatives(self, seed: int = 0, n_points: int = 5, step: float = 1e-5) -> None:
        """Central finite differences must match the declared Jacobians."""
        rng = np.random.default_rng(seed)
        for _ in range(n_points):
            x = self.x0 + rng.normal(scale=0.5, size=self.dim)
            jb = np.asarray(self.drift_jac(x), dtype=float)
            fd = _fd_jacobian(self.drift, x, step)
            if np.linalg.norm(jb - fd) > 1e-5 * (1.0 + np.linalg.norm(jb)):
                raise ModelError(f"drift_jac mismatch with finite differences at x={x}")
            for k in range(self.measure.n_atoms):
                y = self.measure.atom(k)
                jg = np.asarray(self.jump_jac(x, y), dtype=float)
                fdg = _fd_jacobian(lambda z: self.jump(z, y), x, step)
                if np.linalg.norm(jg - fdg) > 1e-5 * (1.0 + np.linalg.norm(jg)):
                    raise ModelError(
                        f"jump_jac mismatch with finite differences at x={x}, atom {k}"
                    )


def _fd_jacobian(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    d = x.size
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)) / (2 * h))
    return np.column_stack(cols)


@dataclass(frozen=True)
class ScalingSchedule:
    """Deviation scaling a(eps) with speed b(eps) = eps / a(eps)^2."""

    epsilon: float
    a_eps: float

    def __post_init__(self) -> None:
        if self.epsilon <= 0 or self.a_eps <= 0:
            raise ModelError("epsilon and a_eps must be positive")

    @property
    def b_eps(self) -> float:
        return self.epsilon / self.a_eps**2

    @classmethod
    def from_exponent(cls, epsilon: float, rho: float = 0.25) -> "ScalingSchedule":
        if not (0 < rho < 0.5):
            raise ModelError(f"scaling exponent must lie in (0, 1/2), got {rho}")
        return cls(epsilon, epsilon**rho)

    @staticmethod
    def grid(eps_values: Sequence[float], rho: float = 0.25) -> list["ScalingSchedule"]:
        """Schedules along a decreasing eps grid; both a and b must decrease."""
        eps = list(eps_values)
        if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ModelError("eps grid must be strictly decreasing")
        out = [ScalingSchedule.from_exponent(e, rho) for e in eps]
        for s1, s2 in zip(out, out[1:]):
            if not (s2.a_eps < s1.a_eps and s2.b_eps < s1.b_eps):
                raise ModelError("a(eps) and b(eps) must decrease along the grid")
        return out


@dataclass(frozen=True)
class PathGrid:
    """Values on a uniform time grid 0 = t_0 < ... < t_n = T."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise ModelError("need at least two grid times")
        if values.shape[0] != times.size:
            raise ModelError("values must have one row per grid time")
        dts = np.diff(times)
        if np.any(dts <= 0) or not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
            raise ModelError("grid must be strictly increasing and uniform")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n_cells(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def same_grid(self, other: "PathGrid") -> bool:
        return self.times.size == other.times.size and bool(
            np.array_equal(self.times, other.times)
        )

    def to_csv(self, path) -> None:
        d = self.dim
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"x_{i + 1}" for i in range(d)) + "\n")
            for t, row in zip(self.times, self.values):
                fh.write(f"{float(t)!r}," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class JumpAudit:
    """Replay record: per event, the pre-jump state and the applied increment."""

    times: np.ndarray
    atoms: np.ndarray
    pre_states: np.ndarray
    increments: np.ndarray

    def total_displacement(self) -> np.ndarray:
        if self.increments.size == 0:
            return np.zeros(0)
        return self.increments.sum(axis=0)


def rk4_step(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + (0.5 * h) * k1)
    k3 = f(x + (0.5 * h) * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def simulate_jump_path(
    model: ModelSpec,
    epsilon: float,
    events: PointRealization,
    n_cells: int = 64,
    with_audit: bool = False,
):
    """Integrate the jump SDE along a fixed event realization.

    Drift is advanced by RK4 over each interval between breakpoints (grid
    times and event times merged); at an event (s, y) the state jumps by
    eps * G(x(s-), y).  The returned path samples the solution on the uniform
    grid; if an event lands exactly on a grid time the recorded value is the
    left limit.
    """
    if epsilon <= 0:
        raise ModelError("epsilon must be positive")
    if events.n_events and (events.times[0] < 0 or events.times[-1] > model.horizon):
        raise ModelError("event times outside [0, horizon]")
    T = model.horizon
    dt = T / n_cells
    grid = np.linspace(0.0, T, n_cells + 1)
    out = np.empty((n_cells + 1, model.dim))
    x = model.x0.copy()
    out[0] = x
    drift = model.drift
    jump = model.jump
    ev_t = events.times
    ev_k = events.atoms
    n_ev = ev_t.size
    pre_states = np.empty((n_ev, model.dim)) if with_audit else None
    increments = np.empty((n_ev, model.dim)) if with_audit else None
    j = 0
    t = 0.0
    for i in range(1, n_cells + 1):
        t_next = grid[i]
        while j < n_ev and ev_t[j] <= t_next:
            s = ev_t[j]
            if s > t:
                x = rk4_step(drift, x, s - t)
                t = s
            if s == t_next:
                out[i] = x  # left limit at a grid-coincident event
            g = epsilon * np.asarray(jump(x, model.measure.atom(ev_k[j])), dtype=float)
            if with_audit:
                pre_states[j] = x
                increments[j] = g
            x = x + g
            j += 1
        if t < t_next:
            x = rk4_step(drift, x, t_next - t)
            t = t_next
            out[i] = x
        elif j == 0 or ev_t[j - 1] != t_next:
            out[i] = x
    path = PathGrid(grid, out)
    if with_audit:
        return path, JumpAudit(ev_t.copy(), ev_k.copy(), pre_states, increments)
    return path


def fluid_limit(model: ModelSpec, n_cells: int = 1000) -> tuple[PathGrid, float]:
    """Deterministic limit path and its peak norm.

    Solves dx/dt = b(x) + sum_k G(x, y_k) w_k by RK4 on the uniform grid and
    returns (path, sup_t |x(t)|).
    """
    grid = np.linspace(0.0, model.horizon, n_cells + 1)
    h = model.horizon / n_cells

    def rhs(x):
        return np.asarray(model.drift(x), dtype=float) + model.compensator(x)

    out = np.empty((n_cells + 1, model.dim))
    x = model.x0.copy()
    out[0] = x
    for i in range(1, n_cells + 1):
        x = rk4_step(rhs, x, h)
        if not np.all(np.isfinite(x)):
            raise ModelError(f"fluid limit blew up at t={grid[i]!r}")
        out[i] = x
    path = PathGrid(grid, out)
    return path, path.sup_norm()


def centered_fluctuation(path: PathGrid, fluid: PathGrid, a_eps: float) -> PathGrid:
    """(path - fluid) / a_eps on a shared grid."""
    if not path.same_grid(fluid):
        raise ModelError("paths live on different grids")
    if a_eps <= 0:
        raise ModelError("a_eps must be positive")
    return PathGrid(path.times, (path.values - fluid.values) / a_eps)


def simulate_controlled_path(
    model: ModelSpec,
    epsilon: float,
    ctrl: ControlField,
    seed,
) -> tuple[PathGrid, CostReport]:
    """Sample a tilted driving measure and integrate the SDE along it.

    The path grid is the control grid (the tilt is constant on its cells);
    the returned cost is the deterministic entropy cost of the tilt.
    """
    if abs(ctrl.horizon - model.horizon) > 1e-12 * max(1.0, model.horizon):
        raise ModelError("control horizon does not match the model horizon")
    theta = 1.0 / epsilon
    events = sample_controlled_measure(model.measure, theta, ctrl, seed)
    path = simulate_jump_path(model, epsilon, events, n_cells=ctrl.n_cells)
    return path, tilt_cost(ctrl, model.measure)
