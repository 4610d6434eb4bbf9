"""White noise, the renormalized model (h, Z), magnetic potentials and
dyadic regularity estimators.

Staggered storage conventions (``N`` interior sites per axis):

* x-edges join site ``(a-1, b)`` to ``(a, b)``; arrays of shape ``(N+1, N)``,
  row ``a`` in ``0..N`` (rows 0 and N touch the zero exterior).
* y-edges join ``(a, b-1)`` to ``(a, b)``; arrays of shape ``(N, N+1)``.
* plaquettes are centered at ``corner + ((i+1/2) delta, (j+1/2) delta)``
  with ``i, j`` in ``0..N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid, laplacian_eigenvalues, sine_transform, spectral_multiply

MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseRealization:
    grid: Grid
    xi: np.ndarray
    seed: int
    stream_id: int


def make_rng(seed: int, stream_id: int) -> np.random.Generator:
    """Counter-based generator keyed by the pair (seed, stream_id)."""
    key = (int(seed) & MASK64) | ((int(stream_id) & MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_white_noise(grid: Grid, seed: int, stream_id: int = 0) -> NoiseRealization:
    """Lattice white noise: iid N(0, 1/delta^2) at every interior site."""
    z = make_rng(seed, stream_id).standard_normal(grid.shape)
    return NoiseRealization(grid, z / grid.delta, int(seed), int(stream_id))


def pair_with(grid: Grid, xi: np.ndarray, phi: np.ndarray) -> float:
    """Discrete pairing <xi, phi> = sum xi phi delta^2."""
    return float(np.sum(xi * phi) * grid.delta**2)


# ---------------------------------------------------------------- mollify / Green

def _check_eps(grid: Grid, eps: float, what: str = "eps"):
    if not eps >= 2 * grid.delta * (1 - 1e-12):
        raise ValueError(
            f"{what}={eps} is under-resolved: needs >= 2*delta = {2 * grid.delta}")


def mollifier_symbol(grid: Grid, eps: float) -> np.ndarray:
    return np.exp(-0.5 * eps**2 * laplacian_eigenvalues(grid))


def mollify_values(grid: Grid, xi: np.ndarray, eps: float) -> np.ndarray:
    _check_eps(grid, eps)
    return spectral_multiply(xi, mollifier_symbol(grid, eps))


def mollify(noise: NoiseRealization, eps: float) -> np.ndarray:
    """Gaussian mollification ``xi_eps = rho_eps * xi`` in the sine basis."""
    return mollify_values(noise.grid, noise.xi, eps)


def green_symbol(grid: Grid, mass: float = 0.0) -> np.ndarray:
    return 1.0 / (laplacian_eigenvalues(grid) + mass**2)


def green_convolve(grid: Grid, xi_eps: np.ndarray, mass: float = 0.0) -> np.ndarray:
    """Solve ``(-Delta_disc + mass^2) h = xi_eps`` with zero Dirichlet data."""
    return spectral_multiply(xi_eps, green_symbol(grid, mass))


def gradient_edges(grid: Grid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences on x- and y-edges, including edges to the exterior."""
    p = np.pad(f, 1)
    gx = (p[1:, 1:-1] - p[:-1, 1:-1]) / grid.delta
    gy = (p[1:-1, 1:] - p[1:-1, :-1]) / grid.delta
    return gx, gy


def grad_sq_sites(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Site value of |grad f|^2: mean over the two edges per axis, summed over axes."""
    ax = np.abs(gx) ** 2
    ay = np.abs(gy) ** 2
    return 0.5 * (ax[:-1] + ax[1:] + ay[:, :-1] + ay[:, 1:])


def _basis_1d(N: int) -> np.ndarray:
    """Orthonormal sine vectors phi_j(a), rows j=1..N, columns a=-1..N (padded)."""
    j = np.arange(1, N + 1)[:, None]
    a = np.arange(0, N + 2)[None, :]
    return np.sqrt(2.0 / (N + 1)) * np.sin(np.pi * j * a / (N + 1))


def _site_weights(grid: Grid, site):
    N = grid.N
    a, b = grid.center_index() if site is None else site
    phi = _basis_1d(N)
    # padded column a+1 is site a; edges to the left/right of site a
    val_x = phi[:, a + 1] ** 2
    dx = (phi[:, a + 1] - phi[:, a]) ** 2 + (phi[:, a + 2] - phi[:, a + 1]) ** 2
    val_y = phi[:, b + 1] ** 2
    dy = (phi[:, b + 1] - phi[:, b]) ** 2 + (phi[:, b + 2] - phi[:, b + 1]) ** 2
    return val_x, dx, val_y, dy


def renorm_constant(grid: Grid, eps: float, mass: float = 0.0, site=None) -> float:
    """Exact ``E |grad_disc h_eps|^2`` at the box center (or ``site``).

    Parseval sum over sine modes; no sampling.
    """
    _check_eps(grid, eps)
    w = (mollifier_symbol(grid, eps) * green_symbol(grid, mass)) ** 2 / grid.delta**2
    val_x, dx, val_y, dy = _site_weights(grid, site)
    tot = dx @ w @ val_y + val_x @ w @ dy
    return float(0.5 * tot / grid.delta**2)


def site_variance(grid: Grid, symbol: np.ndarray, site=None) -> float:
    """Variance at one site of ``S diag(symbol) S xi`` for lattice white noise."""
    val_x, _, val_y, _ = _site_weights(grid, site)
    return float(val_x @ (symbol**2) @ val_y / grid.delta**2)


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class Model:
    grid: Grid
    eps: float
    h: np.ndarray
    Z: np.ndarray
    C_eps: float
    grad_h: tuple[np.ndarray, np.ndarray]
    xi_eps: np.ndarray
    ir_mass: float = 0.0

    def recompute_Z(self) -> np.ndarray:
        gsq = grad_sq_sites(*self.grad_h)
        return self.C_eps - gsq + self.ir_mass**2 * self.h

    @property
    def potential(self) -> np.ndarray:
        """Direct potential ``xi_eps + C_eps``."""
        return self.xi_eps + self.C_eps


def model_from_smooth(grid: Grid, xi_eps: np.ndarray, eps: float, C_eps: float,
                      ir_mass: float = 0.0) -> Model:
    """Model built from an already mollified field and a given constant.

    With the massive Green function ``(-Delta + m^2) h = xi_eps`` the identity
    ``|grad h|^2 - Delta h + Z = xi_eps + C`` requires ``Z = C - |grad h|^2 + m^2 h``.
    """
    h = green_convolve(grid, xi_eps, ir_mass)
    gx, gy = gradient_edges(grid, h)
    Z = C_eps - grad_sq_sites(gx, gy) + ir_mass**2 * h
    return Model(grid, float(eps), h, Z, float(C_eps), (gx, gy), xi_eps, float(ir_mass))


def build_model(noise: NoiseRealization, eps: float, ir_mass: float = 0.0) -> Model:
    grid = noise.grid
    xi_eps = mollify(noise, eps)
    return model_from_smooth(grid, xi_eps, eps, renorm_constant(grid, eps, ir_mass), ir_mass)


def zero_model(grid: Grid, eps: float | None = None, C_eps: float = 0.0) -> Model:
    """Model with h = 0 and Z = C_eps (V = 0 by default)."""
    e = 2 * grid.delta if eps is None else eps
    return model_from_smooth(grid, np.zeros(grid.shape), e, C_eps)


# ---------------------------------------------------------------- magnetic potentials

@dataclass(frozen=True)
class MagneticPotential:
    grid: Grid
    A1: np.ndarray  # (N+1, N) at x-edge midpoints
    A2: np.ndarray  # (N, N+1) at y-edge midpoints
    description: str = "custom"
    holder_norm_estimate: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.A1) or np.any(self.A2))


def edge_midpoints(grid: Grid):
    """Coordinates of x-edge and y-edge midpoints as ``((X1, X2), (Y1, Y2))``."""
    lo0 = grid.center[0] - grid.L / 2
    lo1 = grid.center[1] - grid.L / 2
    mid0 = lo0 + (np.arange(grid.N + 1) + 0.5) * grid.delta
    mid1 = lo1 + (np.arange(grid.N + 1) + 0.5) * grid.delta
    xe = np.meshgrid(mid0, grid.axis(1), indexing="ij")
    ye = np.meshgrid(grid.axis(0), mid1, indexing="ij")
    return xe, ye


def _holder_estimate(grid: Grid, A1, A2, kappa: float = 0.2) -> float:
    sup = max(np.max(np.abs(A1), initial=0.0), np.max(np.abs(A2), initial=0.0))
    jumps = [np.abs(np.diff(A, axis=ax)) for A in (A1, A2) for ax in (0, 1)]
    semi = max(float(np.max(j, initial=0.0)) for j in jumps) / grid.delta ** (1 - kappa)
    return float(sup + semi)


def custom_potential(grid: Grid, func: Callable, description: str = "custom",
                     **params) -> MagneticPotential:
    """Sample ``func(x1, x2) -> (A1, A2)`` at edge midpoints."""
    (x1, x2), (y1, y2) = edge_midpoints(grid)
    A1 = np.asarray(func(x1, x2)[0], dtype=float) * np.ones_like(x1)
    A2 = np.asarray(func(y1, y2)[1], dtype=float) * np.ones_like(y1)
    return MagneticPotential(grid, A1, A2, description, _holder_estimate(grid, A1, A2), params)


def zero_potential(grid: Grid) -> MagneticPotential:
    return MagneticPotential(grid, np.zeros((grid.N + 1, grid.N)),
                             np.zeros((grid.N, grid.N + 1)), "zero", 0.0)


def uniform_vector(b: float, x1, x2):
    """Symmetric gauge ``A = (b/2)(-x2, x1)``."""
    return (-0.5 * b * np.asarray(x2), 0.5 * b * np.asarray(x1))


def uniform_potential(grid: Grid, strength: float = 1.0) -> MagneticPotential:
    if strength == 0:
        return zero_potential(grid)
    return custom_potential(grid, lambda x1, x2: uniform_vector(strength, x1, x2),
                            "uniform", b=float(strength))


def _dual_eigenvalues(grid: Grid) -> np.ndarray:
    M = grid.N + 1
    s = (4.0 / grid.delta**2) * np.sin(np.arange(1, M + 1) * np.pi / (2 * (M + 1))) ** 2
    return s[:, None] + s[None, :]


def gff_stream() -> int:
    """Fixed stream id reserved for magnetic GFF samples (kept apart from noise streams)."""
    return 0x6FF0000000000000


def gff_potential(grid: Grid, seed: int, uv_cutoff: float | None = None,
                  stream_id: int | None = None) -> MagneticPotential:
    """``A = grad^perp Delta^{-1} Gamma`` with ``Gamma`` a UV-regularized GFF.

    Gamma lives on the (N+1)^2 plaquette lattice with zero data beyond it. A
    stream function ``psi`` with ``Delta psi = Gamma`` gives edge values whose
    lattice divergence vanishes at every site and whose circulation around each
    interior plaquette is exactly ``Gamma delta^2``.
    """
    cut = 4 * grid.delta if uv_cutoff is None else float(uv_cutoff)
    _check_eps(grid, cut, "uv_cutoff")
    lam = _dual_eigenvalues(grid)
    sid = gff_stream() if stream_id is None else stream_id
    w = make_rng(seed, sid).standard_normal(lam.shape) / grid.delta
    gamma_hat = sine_transform(w) * np.exp(-0.5 * cut**2 * lam) / np.sqrt(lam)
    gamma = sine_transform(gamma_hat)
    psi = sine_transform(-gamma_hat / lam)
    A1 = -(psi[:, 1:] - psi[:, :-1]) / grid.delta
    A2 = (psi[1:, :] - psi[:-1, :]) / grid.delta
    return MagneticPotential(grid, A1, A2, "gff", _holder_estimate(grid, A1, A2),
                             {"seed": int(seed), "uv_cutoff": cut, "gamma": gamma})


def curl_disc(grid: Grid, A: MagneticPotential) -> np.ndarray:
    """Circulation / delta^2 on the (N-1)^2 plaquettes bounded by stored edges."""
    A1, A2 = A.A1, A.A2
    circ = A1[1:-1, :-1] + A2[1:, 1:-1] - A1[1:-1, 1:] - A2[:-1, 1:-1]
    return circ / grid.delta


def divergence_disc(grid: Grid, A: MagneticPotential) -> np.ndarray:
    return (np.diff(A.A1, axis=0) + np.diff(A.A2, axis=1)) / grid.delta


def sites_from_edges(gx: np.ndarray, gy: np.ndarray):
    """Average staggered edge values onto sites."""
    return 0.5 * (gx[:-1] + gx[1:]), 0.5 * (gy[:, :-1] + gy[:, 1:])


# ---------------------------------------------------------------- regularity

def octave_index(N: int) -> np.ndarray:
    m = np.arange(1, N + 1)
    top = np.maximum(m[:, None], m[None, :])
    return np.floor(np.log2(top)).astype(int)


def besov_norm(grid: Grid, f: np.ndarray, alpha: float) -> float:
    """Dyadic estimator ``max_o 2^{o alpha} sup_x |P_o f(x)|``.

    ``P_o`` keeps the sine modes with ``2^o <= max(j, k) < 2^{o+1}``.
    """
    if not -2 < alpha < 2:
        raise ValueError(f"alpha must lie in (-2, 2), got {alpha}")
    f = np.asarray(f)
    coef = sine_transform(f)
    octs = octave_index(grid.N)
    best = 0.0
    for o in range(int(octs.max()) + 1):
        block = sine_transform(np.where(octs == o, coef, 0.0))
        best = max(best, 2.0 ** (o * alpha) * float(np.max(np.abs(block))))
    return best


def holder_norm(grid: Grid, f: np.ndarray, alpha: float) -> float:
    """Positive-regularity estimator: sup norm plus the dyadic seminorm.

    Fields that do not vanish on the boundary (like ``exp(h)``) are measured
    through ``f - 1`` so the Dirichlet extension does not create a jump.
    """
    f = np.asarray(f)
    return float(np.max(np.abs(f))) + besov_norm(grid, f - 1.0, alpha)
