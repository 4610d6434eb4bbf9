"""Gagliardo-Nirenberg constant and the rate problem for the lowest eigenvalue.

Continuum norms are discretized with delta^2-weighted lattice sums; gradient
energies use the continuum Dirichlet symbol ``(pi/L)^2 (m^2 + n^2)`` on sine
coefficients, which makes the ratio exact (to quadrature error) for smooth,
rapidly decaying trial functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .eigensolver import lowest_eigs, prolongate
from .grid import Grid, make_grid, sine_transform
from .operator import free_operator


@dataclass
class VariationalResult:
    value: float
    optimizer_field: np.ndarray
    iterations: int
    gradient_norm_final: float
    grid_spec: dict
    extra: dict = field(default_factory=dict)


def continuum_symbol(grid: Grid) -> np.ndarray:
    m = np.arange(1, grid.N + 1) * np.pi / grid.L
    return m[:, None] ** 2 + m[None, :] ** 2


def norms(grid: Grid, f: np.ndarray):
    """``(||f||_4^4, ||grad f||_2^2, ||f||_2^2)`` for a site field."""
    w = grid.delta**2
    c = sine_transform(f)
    return (w * np.sum(f**4), w * np.sum(continuum_symbol(grid) * c**2), w * np.sum(f**2))


def gn_functional(grid: Grid, f: np.ndarray) -> float:
    """``J(f) = ||f||_4^4 / (||grad f||_2^2 ||f||_2^2)``."""
    q, g, m = norms(grid, np.asarray(f, dtype=float))
    return float(q / (g * m))


def _neg_log_j(x, grid, K, pin=1.0):
    """``-log J`` plus ``pin * log(||grad f||^2 / ||f||^2)^2``.

    ``J`` is dilation invariant, so the lattice problem would drift towards
    grid-scale fields where lattice sums overestimate it. The penalty fixes
    the dilation gauge at ``||grad f|| = ||f||`` (which the Townes profile
    satisfies) and vanishes at any gauge-fixed maximizer.
    """
    f = x.reshape(grid.shape)
    c = sine_transform(f)
    q = np.sum(f**4)
    g = np.sum(K * c**2)
    m = np.sum(f**2)
    ell = np.log(g) - np.log(m)
    dg = 2 * sine_transform(K * c) / g
    dm = 2 * f / m
    val = -(np.log(q) - np.log(g) - np.log(m)) + pin * ell**2
    grad = -(4 * f**3 / q - dg - dm) + 2 * pin * ell * (dg - dm)
    return val, grad.ravel()


def _maximize_j(grid: Grid, f0: np.ndarray, tol: float, max_iter: int):
    K = continuum_symbol(grid)
    w = grid.delta**2
    res = minimize(_neg_log_j, np.asarray(f0, dtype=float).ravel(), args=(grid, K), jac=True,
                   method="L-BFGS-B",
                   options={"maxiter": max_iter, "maxcor": 30, "ftol": 1e-3 * tol,
                            "gtol": tol * w, "maxfun": 4 * max_iter})
    f = res.x.reshape(grid.shape)
    return f / np.max(np.abs(f)), res


def gn_constant(grid: Grid, tol: float = 1e-8, f0: np.ndarray | None = None,
                max_iter: int = 5000, min_coarse: int = 63) -> VariationalResult:
    """Maximize ``J`` over lattice fields by L-BFGS on ``-log J``.

    Without a starting field the ascent runs first on a chain of coarser grids
    (same box, N halved) and each result is sine-interpolated to the next
    level. ``J`` is invariant under amplitude, dilation and translation, so
    only the value is meaningful.
    """
    if f0 is None:
        levels = [grid]
        while (levels[-1].N + 1) % 2 == 0 and (levels[-1].N + 1) // 2 - 1 >= min_coarse:
            levels.append(make_grid(grid.L, (levels[-1].N + 1) // 2 - 1, grid.center))
        X1, X2 = levels[-1].coords()
        s = grid.L / 12
        f = np.exp(-((X1 - grid.center[0]) ** 2 + (X2 - grid.center[1]) ** 2) / (2 * s**2))
        nit = 0
        for g in levels[:0:-1]:
            f, res = _maximize_j(g, f, tol, max_iter)
            nit += int(res.nit)
            f = prolongate(f[:, :, None], 2 * g.N + 1)[:, :, 0]
    else:
        f, nit = np.asarray(f0, dtype=float), 0
    f, res = _maximize_j(grid, f, tol, max_iter)
    nit += int(res.nit)
    K = continuum_symbol(grid)
    gnorm = float(np.max(np.abs(_neg_log_j(f.ravel(), grid, K)[1]))) / grid.delta**2
    edge = max(np.abs(f[0]).max(), np.abs(f[-1]).max(), np.abs(f[:, 0]).max(), np.abs(f[:, -1]).max())
    if edge > max(tol, 1e-6) ** 0.5:
        warnings.warn(f"optimizer has boundary values {edge:.2e}: mass leaks out of the box")
    if not res.success:
        warnings.warn(f"GN maximization stopped early: {res.message}")
    return VariationalResult(gn_functional(grid, f), f, nit, gnorm,
                             {"L": grid.L, "N": grid.N},
                             {"message": str(res.message), "boundary_max": float(edge)})


def gaussian_trial(grid: Grid) -> np.ndarray:
    X1, X2 = grid.coords()
    return np.exp(-((X1 - grid.center[0]) ** 2 + (X2 - grid.center[1]) ** 2) / 2)


# ---------------------------------------------------------------- rate problem

class GroundState:
    """Lowest eigenpair of ``-Delta_disc + phi`` with warm starts across calls."""

    def __init__(self, grid: Grid, tol: float = 1e-8):
        self.grid, self.tol = grid, tol
        self.vec = None
        self.calls = 0

    def __call__(self, phi: np.ndarray):
        H = free_operator(self.grid, V=phi)
        X0 = None if self.vec is None else self.vec[:, :, None]
        r = lowest_eigs(H, 2, self.tol, method="lobpcg", X0=X0, multilevel=X0 is None)
        self.calls += 1
        psi = np.real(r.eigenvectors[:, :, 0])
        psi = psi / np.linalg.norm(psi)
        self.vec = psi
        gap = float(r.eigenvalues[1] - r.eigenvalues[0])
        return float(r.eigenvalues[0]), psi, gap


def lambda1_gradient(grid: Grid, phi: np.ndarray, solver: GroundState | None = None):
    """``lambda_1(-Delta + phi)`` and its gradient ``|psi|^2`` (lattice-normalized psi)."""
    s = solver or GroundState(grid)
    lam, psi, _ = s(phi)
    return lam, psi**2


def rate_rho(r: float, tol: float = 1e-6, N: int | None = None, level: float = -1.0,
             mu0: float = 10.0, rounds: int = 6, inner_iter: int = 400) -> VariationalResult:
    """``rho_r(level) = inf { 1/2 ||phi||^2 : lambda_1(-Delta + phi) <= level }`` on ``B_{0,r}``.

    Augmented-Lagrangian outer loop (``mu <- 10 mu``) around an L-BFGS inner
    solve of ``1/2 ||phi||^2 + mu/2 max(0, lambda_1 - level + nu/mu)^2`` with
    the Hellmann-Feynman gradient.
    """
    if not r > 0:
        raise ValueError("box size r must be positive")
    grid = make_grid(r, N if N is not None else int(round(16 * r)) - 1)
    w = grid.delta**2
    solver = GroundState(grid, tol=1e-9)
    X1, X2 = grid.coords()
    phi = -np.exp(-(X1**2 + X2**2) / 2)
    # deepen the initial well until it is feasible
    for _ in range(60):
        lam, _, _ = solver(phi)
        if lam <= level:
            break
        phi = phi * 1.3
    mu, nu = mu0, 0.0
    total = 0
    hist = []

    def obj(x):
        p = x.reshape(grid.shape)
        lam, psi, _ = solver(p)
        viol = max(0.0, lam - level + nu / mu)
        val = 0.5 * w * np.sum(p**2) + 0.5 * mu * viol**2
        grad = w * p + mu * viol * psi**2
        return val, grad.ravel()

    x = phi.ravel()
    for k in range(rounds):
        res = minimize(obj, x, jac=True, method="L-BFGS-B",
                       options={"maxiter": inner_iter, "maxcor": 20, "ftol": 1e-14,
                                "gtol": tol * w})
        x = res.x
        total += int(res.nit)
        lam, psi, gap = solver(x.reshape(grid.shape))
        nu = max(0.0, nu + mu * (lam - level))
        hist.append({"mu": mu, "nu": nu, "lambda1": lam, "half_norm": 0.5 * w * float(np.sum(x**2))})
        mu *= 10
    phi = x.reshape(grid.shape)
    lam, psi, gap = solver(phi)
    if gap < 1e-6:
        warnings.warn("ground state of the optimal well looks degenerate")
    # Lagrange stationarity residual: phi + nu |psi|^2 / w ~ 0
    kkt = float(np.max(np.abs(w * phi + nu * psi**2)) / w)
    return VariationalResult(0.5 * w * float(np.sum(phi**2)), phi, total, kkt,
                             {"L": grid.L, "N": grid.N},
                             {"lambda1": lam, "violation": max(0.0, lam - level), "gap": gap,
                              "multiplier": nu, "history": hist, "eigensolves": solver.calls})
