"""Fixed-step classical RK4 drivers shared by the flow integrators.

All trajectories in this package live on one uniform grid.  Time-varying
right-hand sides are supplied per integration cell through a callback
``rhs(cell, stage, y)`` where ``stage`` is 0 at the left node, 1 at the
cell midpoint and 2 at the right node; coefficient paths therefore need
values at nodes and midpoints.  Midpoints of computed paths are
reconstructed with two-point cubic Hermite interpolation, which keeps
the overall scheme fourth-order consistent.
"""

from __future__ import annotations

import numpy as np


def plan_grid(T: float, h: float) -> tuple:
    """Uniform grid on [0, T] with step as close to h as divisibility
    allows.  Returns (grid, h_eff, n_cells)."""
    if not T > 0.0:
        raise ValueError(f"horizon must be positive, got {T}")
    if not h > 0.0:
        raise ValueError(f"step must be positive, got {h}")
    n_cells = max(1, int(round(T / h)))
    grid = np.linspace(0.0, T, n_cells + 1)
    return grid, T / n_cells, n_cells


def hermite_midpoints(values: np.ndarray, derivs: np.ndarray, h: float) -> np.ndarray:
    """Cell midpoints of a path from node values and node derivatives
    (two-point cubic Hermite; O(h^4) accurate)."""
    return 0.5 * (values[:-1] + values[1:]) + (h / 8.0) * (derivs[:-1] - derivs[1:])


def rk4_autonomous(f, y0: np.ndarray, n_cells: int, h: float,
                   norm_cap: float = None):
    """Integrate y' = f(y) forward over n_cells steps of size h.

    Returns (values, derivs) stacked over the n_cells+1 nodes.  When
    ``norm_cap`` is given and the Frobenius norm of the state exceeds it,
    integration stops with a (blow_up_time, values_so_far, derivs_so_far)
    payload raised inside FlowDivergence.
    """
    y = np.asarray(y0, dtype=float)
    values = np.empty((n_cells + 1,) + y.shape)
    derivs = np.empty_like(values)
    values[0] = y
    k1 = f(y)
    derivs[0] = k1
    for i in range(n_cells):
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k1 = f(y)
        values[i + 1] = y
        derivs[i + 1] = k1
        if norm_cap is not None and not np.linalg.norm(y) <= norm_cap:
            raise FlowDivergence((i + 1) * h, values[: i + 2], derivs[: i + 2])
    return values, derivs


class FlowDivergence(RuntimeError):
    """State norm passed the divergence cap during integration."""

    def __init__(self, blow_up_time: float, values=None, derivs=None):
        super().__init__(
            f"flow norm passed the divergence cap at t = {blow_up_time:.6g}; "
            "the system is not stabilizable or the horizon/step is pathological"
        )
        self.blow_up_time = blow_up_time
        self.values = values
        self.derivs = derivs


def rk4_forward(rhs, y0: np.ndarray, n_cells: int, h: float):
    """Integrate a time-varying system forward; rhs(cell, stage, y)."""
    y = np.asarray(y0, dtype=float)
    values = np.empty((n_cells + 1,) + y.shape)
    derivs = np.empty_like(values)
    values[0] = y
    for k in range(n_cells):
        k1 = rhs(k, 0, y)
        derivs[k] = k1
        k2 = rhs(k, 1, y + 0.5 * h * k1)
        k3 = rhs(k, 1, y + 0.5 * h * k2)
        k4 = rhs(k, 2, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        values[k + 1] = y
    derivs[n_cells] = rhs(n_cells - 1, 2, y)
    return values, derivs


def affine_rk4_forward_maps(F_nodes, F_mids, c_nodes, c_mids, h: float):
    """Per-cell RK4 transition maps for y' = F(t) y + c(t).

    Returns (Phi, psi) with y_{k+1} = Phi[k] y_k + psi[k]; algebraically
    identical to rk4_forward with an affine rhs, but assembled with batched
    matmuls so the time loop degenerates to a cheap scan.
    """
    F1, Fm, F4 = F_nodes[:-1], F_mids, F_nodes[1:]
    c1, cm, c4 = c_nodes[:-1], c_mids, c_nodes[1:]
    eye = np.eye(F_nodes.shape[-1])
    M1, d1 = F1, c1
    M2 = Fm @ (eye + (0.5 * h) * M1)
    d2 = (0.5 * h) * _mv(Fm, d1) + cm
    M3 = Fm @ (eye + (0.5 * h) * M2)
    d3 = (0.5 * h) * _mv(Fm, d2) + cm
    M4 = F4 @ (eye + h * M3)
    d4 = h * _mv(F4, d3) + c4
    Phi = eye + (h / 6.0) * (M1 + 2.0 * M2 + 2.0 * M3 + M4)
    psi = (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    return Phi, psi


def affine_rk4_backward_maps(F_nodes, F_mids, c_nodes, c_mids, h: float):
    """Per-cell RK4 maps for integrating y' = F(t) y + c(t) from the right
    node of each cell to the left one: y_k = Phi[k] y_{k+1} + psi[k]."""
    F1, Fm, F4 = F_nodes[:-1], F_mids, F_nodes[1:]
    c1, cm, c4 = c_nodes[:-1], c_mids, c_nodes[1:]
    eye = np.eye(F_nodes.shape[-1])
    M1, d1 = F4, c4
    M2 = Fm @ (eye - (0.5 * h) * M1)
    d2 = (-0.5 * h) * _mv(Fm, d1) + cm
    M3 = Fm @ (eye - (0.5 * h) * M2)
    d3 = (-0.5 * h) * _mv(Fm, d2) + cm
    M4 = F1 @ (eye - h * M3)
    d4 = -h * _mv(F1, d3) + c1
    Phi = eye - (h / 6.0) * (M1 + 2.0 * M2 + 2.0 * M3 + M4)
    psi = (-h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    return Phi, psi


def _mv(mats, vecs):
    return np.matmul(mats, vecs[..., None])[..., 0]


def scan_forward(Phi, psi, y0):
    """y_{k+1} = Phi[k] y_k + psi[k], returning all nodes."""
    out = np.empty((len(Phi) + 1,) + np.shape(y0))
    out[0] = y0
    y = np.asarray(y0, dtype=float)
    for k in range(len(Phi)):
        y = Phi[k] @ y + psi[k]
        out[k + 1] = y
    return out


def scan_backward(Phi, psi, y_terminal):
    """y_k = Phi[k] y_{k+1} + psi[k], returning all nodes."""
    out = np.empty((len(Phi) + 1,) + np.shape(y_terminal))
    out[-1] = y_terminal
    y = np.asarray(y_terminal, dtype=float)
    for k in range(len(Phi) - 1, -1, -1):
        y = Phi[k] @ y + psi[k]
        out[k] = y
    return out


def rk4_backward(rhs, y_terminal: np.ndarray, n_cells: int, h: float):
    """Integrate a time-varying system from the terminal node back to 0;
    rhs(cell, stage, y) with the same stage convention as rk4_forward."""
    y = np.asarray(y_terminal, dtype=float)
    values = np.empty((n_cells + 1,) + y.shape)
    derivs = np.empty_like(values)
    values[n_cells] = y
    for k in range(n_cells - 1, -1, -1):
        k1 = rhs(k, 2, y)
        derivs[k + 1] = k1
        k2 = rhs(k, 1, y - 0.5 * h * k1)
        k3 = rhs(k, 1, y - 0.5 * h * k2)
        k4 = rhs(k, 0, y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        values[k] = y
    derivs[0] = rhs(0, 0, y)
    return values, derivs
