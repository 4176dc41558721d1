"""Fluid-diffusion transition matrix and fluid Laplacian.

Pairwise transport velocities are turned into first-passage transition
probabilities of a piecewise advection-diffusion walk, row-normalized into
a Markov matrix Q, and symmetrized into the Laplacian F = D - Q_sym.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateError, ParameterError, SizeError

SERIES_CUTOFF = 1e-4


def _x_over_sinh(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x * x / 6.0, safe / np.sinh(safe))


def transition_probability(v_plus, v_minus, b_plus, b_minus):
    """Probability that the walk leaves toward the '+' neighbour.

    With a = v+/(2 b+), c = v-/(2 b-) and g(x) = x / sinh(x):

        p = g(a) e^a / (g(a) e^a + g(c) e^-c)

    Works elementwise on arrays. Reduces to 1/(1 + exp(-v/b)) when both
    sides share the same parameters.
    """
    b_plus = np.asarray(b_plus, dtype=float)
    b_minus = np.asarray(b_minus, dtype=float)
    if np.any(b_plus <= 0) or np.any(b_minus <= 0):
        raise ParameterError("diffusivities must be positive")
    a = np.asarray(v_plus, dtype=float) / (2.0 * b_plus)
    c = np.asarray(v_minus, dtype=float) / (2.0 * b_minus)
    up = _x_over_sinh(a) * np.exp(a)
    down = _x_over_sinh(c) * np.exp(-c)
    p = up / (up + down)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class TransportField:
    v: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class TransitionMatrix:
    q: np.ndarray

    @property
    def q_sym(self) -> np.ndarray:
        return 0.5 * (self.q + self.q.T)


@dataclass(frozen=True)
class FluidLaplacian:
    f: np.ndarray
    f_norm: np.ndarray
    d: np.ndarray


def membership_matrix(relevant_sets, n_features: int) -> np.ndarray:
    mem = np.zeros((len(relevant_sets), n_features), dtype=bool)
    for i, r in enumerate(relevant_sets):
        mem[i, list(r)] = True
    return mem


def transport_velocity(values, relevant_sets) -> np.ndarray:
    """Negated distance over the features two samples both find relevant.

    v_ij = -||x_i - x_j|| restricted to R_i & R_j, divided by sqrt of the
    number of shared features; -1 when nothing is shared; 0 on the diagonal.
    """
    x = np.asarray(values, dtype=float)
    if np.any(np.abs(x) > 1 + 1e-9):
        raise ContractError("transport velocity expects min-max normalized values")
    n_samples = x.shape[0]
    if n_samples < 3:
        raise SizeError("need at least 3 samples")
    mem = membership_matrix(relevant_sets, x.shape[1])
    v = np.empty((n_samples, n_samples))
    for i in range(n_samples):
        shared = mem[i] & mem
        diff = np.where(shared, x[i] - x, 0.0)
        count = shared.sum(axis=1)
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        v[i] = np.where(count > 0, -dist / np.sqrt(np.maximum(count, 1)), -1.0)
        v[i, i] = 0.0
    return v


def build_q(v, b=None) -> TransitionMatrix:
    """Row-stochastic transition matrix over the complete graph.

    For edge (i, j) the '+' side uses (v_ij, b_ij) and the '-' side uses the
    averages of v_im and b_im over the other N - 2 neighbours of i.
    b defaults to all ones.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if n < 3:
        raise SizeError(f"need at least 3 samples, got {n}")
    b = np.ones_like(v) if b is None else np.asarray(b, dtype=float)
    off = ~np.eye(n, dtype=bool)
    if np.any(b[off] <= 0):
        raise ParameterError("diffusivities must be positive")
    v_off = np.where(off, v, 0.0)
    b_off = np.where(off, b, 0.0)
    v_rows = v_off.sum(axis=1, keepdims=True)
    b_rows = b_off.sum(axis=1, keepdims=True)
    v_minus = (v_rows - v_off) / (n - 2)
    b_minus = (b_rows - b_off) / (n - 2)
    b_plus = np.where(off, b, 1.0)
    b_minus = np.where(off, b_minus, 1.0)
    p = transition_probability(v_off, v_minus, b_plus, b_minus)
    p = np.where(off, p, 0.0)
    return TransitionMatrix(p / p.sum(axis=1, keepdims=True))


def fluid_laplacian(q: TransitionMatrix) -> FluidLaplacian:
    qs = q.q_sym.copy()
    np.fill_diagonal(qs, 0.0)
    d = qs.sum(axis=1)
    if np.any(d <= 0):
        raise DegenerateError(f"zero-degree node(s): {np.flatnonzero(d <= 0).tolist()}")
    f = np.diag(d) - qs
    s = 1.0 / np.sqrt(d)
    f_norm = f * np.outer(s, s)
    return FluidLaplacian(f, 0.5 * (f_norm + f_norm.T), d)


def write_matrix_csv(path, m):
    np.savetxt(path, np.asarray(m), delimiter=",", fmt="%.17g")
