"""Discrete magnetic Schrodinger operator ``(i grad + A)^2 + V`` with Peierls phases."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .fields import (MagneticPotential, Model, besov_norm, divergence_disc, gradient_edges,
                     grad_sq_sites, holder_norm, sites_from_edges)
from .grid import Grid, laplacian_apply


@dataclass(frozen=True)
class MagneticOperator:
    """Hermitian lattice operator.

    ``U1`` (shape (N+1, N)) holds ``exp(i theta)`` for the hop from site
    ``(a-1, b)`` to ``(a, b)`` with ``theta = -A1(mid) delta``; ``U2`` likewise
    for y-links. Links touching the exterior are stored but never used.
    """

    grid: Grid
    U1: np.ndarray
    U2: np.ndarray
    potential: np.ndarray
    shift: float = 0.0
    description: str = ""

    @property
    def dim(self) -> int:
        return self.grid.size

    @property
    def is_real(self) -> bool:
        return not (np.any(self.U1.imag) or np.any(self.U2.imag))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return apply(self, u)

    def gershgorin_lower(self) -> float:
        # diagonal 4/delta^2 + V, off-diagonal row sums at most 4/delta^2
        return float(np.min(self.potential))

    def to_sparse(self) -> sp.csr_matrix:
        return operator_matrix(self)


def _links(grid: Grid, A: MagneticPotential | None):
    if A is None or A.is_zero:
        return (np.ones((grid.N + 1, grid.N), complex), np.ones((grid.N, grid.N + 1), complex))
    if A.grid != grid:
        raise ValueError("magnetic potential lives on a different grid")
    return np.exp(-1j * A.A1 * grid.delta), np.exp(-1j * A.A2 * grid.delta)


def _make(grid, A, V, tag) -> MagneticOperator:
    U1, U2 = _links(grid, A)
    V = np.asarray(V, dtype=float)
    if V.shape != grid.shape:
        raise ValueError(f"potential shape {V.shape} does not match grid {grid.shape}")
    return MagneticOperator(grid, U1, U2, V, -float(np.min(V)), tag)


def assemble_direct(grid: Grid, A: MagneticPotential | None, model: Model) -> MagneticOperator:
    """``(i grad + A)^2 + xi_eps + C_eps``."""
    if model.grid != grid:
        raise ValueError("model lives on a different grid")
    tag = "direct/" + (A.description if A is not None else "zero")
    return _make(grid, A, model.xi_eps + model.C_eps, tag)


def ansatz_potential(grid: Grid, h: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """``|grad h|^2 - Delta h + zeta`` on sites."""
    return grad_sq_sites(*gradient_edges(grid, h)) + laplacian_apply(grid, h) + zeta


def assemble_ansatz(grid: Grid, A: MagneticPotential | None, h: np.ndarray,
                    zeta: np.ndarray) -> MagneticOperator:
    """``(i grad + A)^2 + |grad h|^2 - Delta h + zeta``."""
    if np.shape(h) != grid.shape or np.shape(zeta) != grid.shape:
        raise ValueError("h and zeta must be site fields on the grid")
    tag = "ansatz/" + (A.description if A is not None else "zero")
    return _make(grid, A, ansatz_potential(grid, h, zeta), tag)


def free_operator(grid: Grid, A: MagneticPotential | None = None,
                  V: np.ndarray | None = None) -> MagneticOperator:
    return _make(grid, A, np.zeros(grid.shape) if V is None else V, "free")


def apply(H: MagneticOperator, u: np.ndarray) -> np.ndarray:
    """Matrix-free action on ``(N, N)`` or batched ``(N, N, p)`` arrays."""
    N = H.grid.N
    if u.shape[:2] != (N, N):
        raise ValueError(f"field shape {u.shape} does not match grid ({N}, {N})")
    extra = (None,) * (u.ndim - 2)
    ux = H.U1[(slice(1, -1), slice(None)) + extra]
    uy = H.U2[(slice(None), slice(1, -1)) + extra]
    real = H.is_real and not np.iscomplexobj(u)
    out = 4.0 * u
    if real:
        out[:-1] -= u[1:]
        out[1:] -= u[:-1]
        out[:, :-1] -= u[:, 1:]
        out[:, 1:] -= u[:, :-1]
    else:
        out = out.astype(complex)
        out[:-1] -= ux * u[1:]
        out[1:] -= np.conj(ux) * u[:-1]
        out[:, :-1] -= uy * u[:, 1:]
        out[:, 1:] -= np.conj(uy) * u[:, :-1]
    out /= H.grid.delta**2
    out += H.potential[(slice(None), slice(None)) + extra] * u
    return out


def operator_matrix(H: MagneticOperator) -> sp.csr_matrix:
    """Sparse matrix in row-major site order (index ``a*N + b``)."""
    N = H.grid.N
    d2 = 1.0 / H.grid.delta**2
    idx = np.arange(N * N).reshape(N, N)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [(4 * d2 + H.potential).ravel().astype(complex)]
    hx = -d2 * H.U1[1:-1]  # hop (a, b) -> (a+1, b), shape (N-1, N)
    hy = -d2 * H.U2[:, 1:-1]
    for s, t, v in ((idx[:-1], idx[1:], hx), (idx[:, :-1], idx[:, 1:], hy)):
        rows += [s.ravel(), t.ravel()]
        cols += [t.ravel(), s.ravel()]
        vals += [v.ravel(), np.conj(v).ravel()]
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * N, N * N)).tocsr()
    if H.is_real:
        M = M.real.tocsr()
    return M


def inner(u: np.ndarray, v: np.ndarray) -> complex:
    """``<u, v>`` linear in the first slot (sum over sites, no delta weight)."""
    return complex(np.vdot(v, u))


def gauge_transform(H: MagneticOperator, phi: np.ndarray) -> MagneticOperator:
    """Return ``e^{i phi} H e^{-i phi}``: link phases times ``e^{i(phi_s - phi_s')}``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != H.grid.shape:
        raise ValueError("gauge function must be a site field")
    p = np.pad(phi, 1)
    gx = np.exp(1j * (p[:-1, 1:-1] - p[1:, 1:-1]))
    gy = np.exp(1j * (p[1:-1, :-1] - p[1:-1, 1:]))
    return replace(H, U1=H.U1 * gx, U2=H.U2 * gy, description=H.description + "+gauge")


# ---------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class DiagnosticsBundle:
    C_B: float
    M_h: float
    omega: float
    t0: float
    kappa: float


def transport_fields(grid: Grid, A: MagneticPotential | None, model: Model):
    """``F1 = 2iA + 2 grad h`` (site-averaged pair) and
    ``F2 = i div A - 2i grad h . A + |A|^2 + zeta`` on sites."""
    gx, gy = model.grad_h
    if A is None:
        A1 = np.zeros_like(gx)
        A2 = np.zeros_like(gy)
    else:
        A1, A2 = A.A1, A.A2
    F1x, F1y = sites_from_edges(2j * A1 + 2 * gx, 2j * A2 + 2 * gy)
    hA_x, hA_y = sites_from_edges(gx * A1, gy * A2)
    a2x, a2y = sites_from_edges(A1**2, A2**2)
    div = np.zeros(grid.shape) if A is None else divergence_disc(grid, A)
    F2 = 1j * div - 2j * (hA_x + hA_y) + a2x + a2y + model.Z
    return (F1x, F1y), F2


def _cnorm(grid, f, alpha):
    return besov_norm(grid, f.real, alpha) + besov_norm(grid, np.imag(f), alpha)


def diagnostics(grid: Grid, A: MagneticPotential | None, model: Model,
                kappa: float = 0.2) -> DiagnosticsBundle:
    if not 0 < kappa < 0.25:
        raise ValueError(f"kappa must lie in (0, 1/4), got {kappa}")
    (F1x, F1y), F2 = transport_fields(grid, A, model)
    C_B = _cnorm(grid, F1x, -kappa) + _cnorm(grid, F1y, -kappa) + _cnorm(grid, F2, -kappa)
    C_B = max(C_B, 1e-300)
    M_h = max(1.0, holder_norm(grid, np.exp(-model.h), 1 - kappa)
              * holder_norm(grid, np.exp(model.h), 1 - kappa))
    # work in logs: (2 C_B)^(-2/kappa) overflows for tiny C_B
    log_t0 = min(0.0, -2.0 / kappa * np.log(2 * C_B))
    t0 = max(float(np.exp(log_t0)), np.finfo(float).tiny)
    return DiagnosticsBundle(float(C_B), float(M_h), float(np.log(M_h) / t0), t0, kappa)
