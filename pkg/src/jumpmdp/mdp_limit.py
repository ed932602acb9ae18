"""Linearized fluctuation dynamics around the fluid limit.

Per time cell (coefficients frozen at the cell midpoint of the fluid path)
this module builds:

* the linearized drift matrix  A1(s) = Db(x0(s)) + sum_k DxG(x0(s), y_k) w_k,
* an orthonormal frame e_j(., s) spanning {G_i(x0(s), .)} in L2 of the mark
  measure, and the gain matrix A_ij(s) = <G_i, e_j>,
* the Lyapunov covariance of the matching small-noise Gaussian process, and
* a replay decomposition of controlled fluctuation paths into drift,
  martingale, coefficient, coupling and forcing terms whose sum reconstructs
  the path exactly.

Frames are recomputed independently per cell.  Only the span and A A^T enter
any downstream quantity, so sign or rotation discontinuities across cells are
harmless; a regression test pins that order-invariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .jump_sde import ModelError, ModelSpec, PathGrid
from .mark_space import MarkMeasure
from .prm import ControlField, CostReport, sample_controlled_measure, tilt_cost

__all__ = [
    "LinearizedSystem",
    "GaussianLimit",
    "build_linearization",
    "solve_limit_path",
    "solve_limit_path_from_u",
    "gaussian_covariance",
    "FluctuationParts",
    "decompose_controlled_path",
]

FRAME_RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearizedSystem:
    """Per-cell frozen coefficients of the linearized fluctuation equation."""

    times: np.ndarray          # (n_cells + 1,)
    drift_mat: np.ndarray      # (n_cells, d, d)
    gain: np.ndarray           # (n_cells, d, d), zero columns where rank drops
    frame: np.ndarray          # (n_cells, d, n_atoms) orthonormal rows per cell
    jump_vals: np.ndarray      # (n_cells, d, n_atoms) values G_i(x0, y_k)
    rank: np.ndarray           # (n_cells,)
    measure: MarkMeasure

    @property
    def n_cells(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dim(self) -> int:
        return self.drift_mat.shape[1]

    def forcing_from_psi(self, psi: np.ndarray) -> np.ndarray:
        """Cellwise integral of psi(y, s) G(x0(s), y) against the marks."""
        w = self.measure.weights
        return np.einsum("cik,kc->ci", self.jump_vals, psi * w[:, None])

    def psi_coefficients(self, psi: np.ndarray) -> np.ndarray:
        """Frame coefficients u_j(s) = <psi(., s), e_j(., s)> per cell."""
        w = self.measure.weights
        return np.einsum("cjk,kc->cj", self.frame, psi * w[:, None])

    def psi_from_coefficients(self, u: np.ndarray) -> np.ndarray:
        """Control field values sum_j u_j(s) e_j(y, s), shape (n_atoms, n_cells)."""
        return np.einsum("cj,cjk->kc", u, self.frame)

    def export_csv(self, path) -> None:
        """One block per cell: drift matrix, gain matrix, rank."""
        d = self.dim
        with open(path, "w") as fh:
            fh.write("cell,t_mid,rank," +
                     ",".join(f"a1_{i}{j}" for i in range(d) for j in range(d)) + "," +
                     ",".join(f"gain_{i}{j}" for i in range(d) for j in range(d)) + "\n")
            for c in range(self.n_cells):
                mid = 0.5 * (self.times[c] + self.times[c + 1])
                row = [str(c), repr(float(mid)), str(int(self.rank[c]))]
                row += [repr(float(v)) for v in self.drift_mat[c].ravel()]
                row += [repr(float(v)) for v in self.gain[c].ravel()]
                fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class GaussianLimit:
    """Covariance of the small-noise Gaussian process sharing the rate function."""

    times: np.ndarray
    covariances: np.ndarray    # (n_cells + 1, d, d)
    drift_mat: np.ndarray
    gain: np.ndarray

    def terminal(self) -> np.ndarray:
        return self.covariances[-1]

    def export_csv(self, path) -> None:
        d = self.covariances.shape[1]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"sigma_{i}{j}" for i in range(d) for j in range(d)) + "\n")
            for t, s in zip(self.times, self.covariances):
                fh.write(f"{float(t)!r}," + ",".join(repr(float(v)) for v in s.ravel()) + "\n")


def _weighted_frame(gvals: np.ndarray, weights: np.ndarray, order: Sequence[int]):
    """Modified Gram-Schmidt in the weighted inner product, with rank tolerance."""
    d, n_atoms = gvals.shape
    frame = np.zeros((d, n_atoms))
    norms = np.sqrt(np.maximum(np.sum(gvals * gvals * weights, axis=1), 0.0))
    max_norm = float(norms.max()) if d else 0.0
    accepted: list[int] = []
    for j in order:
        v = gvals[j].copy()
        for _ in range(2):  # one re-orthogonalization pass
            for i in accepted:
                v = v - np.dot(v * weights, frame[i]) * frame[i]
        nrm = math.sqrt(max(np.dot(v * weights, v), 0.0))
        if max_norm > 0 and nrm > FRAME_RANK_TOL * max_norm:
            frame[j] = v / nrm
            accepted.append(j)
    return frame, len(accepted)


def build_linearization(
    model: ModelSpec,
    fluid_path: PathGrid,
    frame_order: Sequence[int] | None = None,
) -> LinearizedSystem:
    """Freeze the linearized coefficients per cell of the fluid path grid.

    frame_order optionally fixes the order in which the jump-coefficient
    functions enter the orthogonalization; any order spans the same space and
    leaves every downstream quantity unchanged.
    """
    if fluid_path.dim != model.dim:
        raise ModelError("fluid path dimension does not match the model")
    n = fluid_path.n_cells
    d = model.dim
    meas = model.measure
    n_atoms = meas.n_atoms
    w = meas.weights
    order = list(range(d)) if frame_order is None else list(frame_order)
    if sorted(order) != list(range(d)):
        raise ModelError("frame_order must be a permutation of the components")
    a1 = np.empty((n, d, d))
    gain = np.zeros((n, d, d))
    frame = np.zeros((n, d, n_atoms))
    jv = np.empty((n, d, n_atoms))
    rank = np.empty(n, dtype=np.int64)
    for c in range(n):
        xmid = 0.5 * (fluid_path.values[c] + fluid_path.values[c + 1])
        m = np.asarray(model.drift_jac(xmid), dtype=float).copy()
        for k in range(n_atoms):
            y = meas.atom(k)
            m += w[k] * np.asarray(model.jump_jac(xmid, y), dtype=float)
            jv[c, :, k] = np.asarray(model.jump(xmid, y), dtype=float)
        a1[c] = m
        frame[c], rank[c] = _weighted_frame(jv[c], w, order)
        gain[c] = jv[c] @ (frame[c] * w).T
    return LinearizedSystem(
        times=fluid_path.times,
        drift_mat=a1,
        gain=gain,
        frame=frame,
        jump_vals=jv,
        rank=rank,
        measure=meas,
    )


def _rk4_affine(mat: np.ndarray, forcing: np.ndarray, x: np.ndarray, h: float) -> np.ndarray:
    k1 = mat @ x + forcing
    k2 = mat @ (x + (0.5 * h) * k1) + forcing
    k3 = mat @ (x + (0.5 * h) * k2) + forcing
    k4 = mat @ (x + h * k3) + forcing
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _as_psi_array(sys: LinearizedSystem, psi) -> np.ndarray:
    arr = psi.psi if isinstance(psi, ControlField) else np.asarray(psi, dtype=float)
    if arr.shape != (sys.measure.n_atoms, sys.n_cells):
        raise ModelError(
            f"psi must have shape ({sys.measure.n_atoms}, {sys.n_cells}), got {arr.shape}"
        )
    return arr


def solve_limit_path(sys: LinearizedSystem, psi) -> PathGrid:
    """Limit fluctuation path driven by a mark-space control psi(y, s).

    Solves x' = A1(s) x + integral of psi(y, s) G(x0(s), y) over marks,
    x(0) = 0, with per-cell frozen coefficients.
    """
    arr = _as_psi_array(sys, psi)
    forcing = sys.forcing_from_psi(arr)
    return _integrate_cells(sys, forcing)


def solve_limit_path_from_u(sys: LinearizedSystem, u: np.ndarray) -> PathGrid:
    """Limit fluctuation path driven by cellwise controls u through the gain.

    u has shape (n_cells, d); solves x' = A1(s) x + A(s) u(s), x(0) = 0.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape != (sys.n_cells, sys.dim):
        raise ModelError(f"u must have shape ({sys.n_cells}, {sys.dim}), got {u.shape}")
    forcing = np.einsum("cij,cj->ci", sys.gain, u)
    return _integrate_cells(sys, forcing)


def _integrate_cells(sys: LinearizedSystem, forcing: np.ndarray) -> PathGrid:
    n, d = sys.n_cells, sys.dim
    h = sys.dt
    out = np.zeros((n + 1, d))
    x = np.zeros(d)
    for c in range(n):
        x = _rk4_affine(sys.drift_mat[c], forcing[c], x, h)
        out[c + 1] = x
    return PathGrid(sys.times, out)


def gaussian_covariance(sys: LinearizedSystem) -> GaussianLimit:
    """Covariance along the Gaussian limit: S' = A1 S + S A1' + A A'.

    Solved by RK4 with per-cell frozen coefficients, starting from zero and
    re-symmetrized each step.
    """
    n, d = sys.n_cells, sys.dim
    h = sys.dt
    covs = np.zeros((n + 1, d, d))
    s = np.zeros((d, d))
    for c in range(n):
        a1 = sys.drift_mat[c]
        q = sys.gain[c] @ sys.gain[c].T

        def rhs(m):
            return a1 @ m + m @ a1.T + q

        k1 = rhs(s)
        k2 = rhs(s + (0.5 * h) * k1)
        k3 = rhs(s + (0.5 * h) * k2)
        k4 = rhs(s + h * k3)
        s = s + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        s = 0.5 * (s + s.T)
        covs[c + 1] = s
    return GaussianLimit(times=sys.times, covariances=covs, drift_mat=sys.drift_mat, gain=sys.gain)


@dataclass(frozen=True)
class FluctuationParts:
    """Additive decomposition of a controlled fluctuation path.

    fluctuation = drift_gap + martingale + coefficient_gap + coupling + forcing,
    where the drift gap collects (b(xbar) - b(x0))/a, the martingale is the
    compensated jump noise, the coefficient gap is the uncontrolled jump-mean
    mismatch, the coupling is the control acting through the coefficient
    mismatch, and the forcing is the control acting at the fluid state.  The
    identity holds to round-off by construction (shared quadrature samples).
    """

    fluctuation: PathGrid
    drift_gap: PathGrid
    martingale: PathGrid
    coefficient_gap: PathGrid
    coupling: PathGrid
    forcing: PathGrid
    cost: CostReport

    def reconstruction(self) -> np.ndarray:
        return (
            self.drift_gap.values
            + self.martingale.values
            + self.coefficient_gap.values
            + self.coupling.values
            + self.forcing.values
        )

    def reconstruction_gap(self) -> float:
        return float(np.max(np.abs(self.reconstruction() - self.fluctuation.values)))


def decompose_controlled_path(
    model: ModelSpec,
    epsilon: float,
    ctrl: ControlField,
    seed,
) -> FluctuationParts:
    """Simulate a tilted path and split its fluctuation into named terms.

    The controlled state, the fluid path and every time integral are advanced
    jointly by one RK4 pass over shared breakpoints (grid cells and event
    times), so the five terms cancel algebraically against the fluctuation.
    """
    if abs(ctrl.horizon - model.horizon) > 1e-12 * max(1.0, model.horizon):
        raise ModelError("control horizon does not match the model horizon")
    theta = 1.0 / epsilon
    events = sample_controlled_measure(model.measure, theta, ctrl, seed)
    meas = model.measure
    w = meas.weights
    marks = model.atom_marks()
    a = ctrl.a_eps
    psi = ctrl.psi
    d = model.dim
    n = ctrl.n_cells
    grid = np.linspace(0.0, model.horizon, n + 1)

    def jump_matrix(x):
        cols = np.empty((d, meas.n_atoms))
        for k, y in enumerate(marks):
            cols[:, k] = model.jump(x, y)
        return cols

    def rhs(z, psi_cell):
        xbar, x0v = z[0], z[1]
        gm_bar = jump_matrix(xbar)
        gm_0 = jump_matrix(x0v)
        out = np.empty_like(z)
        out[0] = model.drift(xbar)
        out[2] = gm_0 @ w
        out[1] = model.drift(x0v) + out[2]
        out[3] = gm_bar @ w
        out[4] = gm_bar @ (psi_cell * w)
        out[5] = gm_0 @ (psi_cell * w)
        return out

    # state rows: xbar, x0, P (fluid jump mean), Sbar, Ebar, C0
    z = np.zeros((6, d))
    z[0] = model.x0
    z[1] = model.x0
    jumpsum = np.zeros(d)

    rec = {
        name: np.zeros((n + 1, d))
        for name in ("y", "drift", "mart", "coeff", "coup", "force")
    }

    def record(i):
        xbar, x0v, p_acc, sbar, ebar, c0 = z
        k_acc = x0v - model.x0
        dbar = xbar - model.x0 - epsilon * jumpsum
        rec["y"][i] = (xbar - x0v) / a
        rec["drift"][i] = (dbar - (k_acc - p_acc)) / a
        rec["mart"][i] = (epsilon * jumpsum - (sbar + a * ebar)) / a
        rec["coeff"][i] = (sbar - p_acc) / a
        rec["coup"][i] = ebar - c0
        rec["force"][i] = c0

    ev_t, ev_k = events.times, events.atoms
    n_ev = ev_t.size
    j = 0
    t = 0.0
    for i in range(1, n + 1):
        t_next = grid[i]
        psi_cell = psi[:, i - 1]

        def step(to_time):
            nonlocal z, t
            h = to_time - t
            k1 = rhs(z, psi_cell)
            k2 = rhs(z + (0.5 * h) * k1, psi_cell)
            k3 = rhs(z + (0.5 * h) * k2, psi_cell)
            k4 = rhs(z + h * k3, psi_cell)
            z = z + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            t = to_time

        while j < n_ev and ev_t[j] <= t_next:
            s = ev_t[j]
            if s > t:
                step(s)
            if s == t_next:
                record(i)
            g = np.asarray(model.jump(z[0], meas.atom(ev_k[j])), dtype=float)
            jumpsum = jumpsum + g
            z = z.copy()
            z[0] = z[0] + epsilon * g
            j += 1
        if t < t_next:
            step(t_next)
            record(i)
        elif j == 0 or ev_t[j - 1] != t_next:
            record(i)

    mk = lambda key: PathGrid(grid, rec[key])
    return FluctuationParts(
        fluctuation=mk("y"),
        drift_gap=mk("drift"),
        martingale=mk("mart"),
        coefficient_gap=mk("coeff"),
        coupling=mk("coup"),
        forcing=mk("force"),
        cost=tilt_cost(ctrl, meas),
    )
