"""Box geometry and the Dirichlet sine-spectral machinery.

Fields on a :class:`Grid` are plain ``(N, N)`` numpy arrays indexed ``[j-1, k-1]``
where ``j`` runs along x1 and ``k`` along x2. Values outside the interior lattice
are implicitly zero (Dirichlet boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft


@dataclass(frozen=True)
class Grid:
    """Square box ``center + (-L/2, L/2)^2`` with ``N`` interior points per axis."""

    L: float
    N: int
    center: tuple[float, float] = (0.0, 0.0)
    delta: float = field(init=False)

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N < 2:
            raise ValueError(f"grid needs N >= 2 interior points, got N={self.N!r}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"box side length must be positive, got L={self.L!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "delta", self.L / (self.N + 1))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.N)

    @property
    def size(self) -> int:
        return self.N * self.N

    def axis(self, dim: int) -> np.ndarray:
        """Interior site coordinates along axis ``dim`` (0 for x1, 1 for x2)."""
        j = np.arange(1, self.N + 1)
        return self.center[dim] - self.L / 2 + j * self.delta

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Site coordinates ``(X1, X2)`` as ``(N, N)`` arrays."""
        return np.meshgrid(self.axis(0), self.axis(1), indexing="ij")

    def center_index(self) -> tuple[int, int]:
        """Array index of the site nearest the box center."""
        c = self.N // 2
        return (c, c)

    def contains(self, other: "Grid", atol: float = 1e-9) -> bool:
        """True when ``other`` is a sub-box whose sites lie on this lattice."""
        if abs(other.delta - self.delta) > atol * self.delta:
            return False
        try:
            self.offset_of(other)
        except ValueError:
            return False
        return True

    def offset_of(self, other: "Grid") -> tuple[int, int]:
        """Index offset of ``other``'s first site within this grid's lattice.

        Raises ``ValueError`` if ``other`` does not sit on this lattice or is not
        fully inside the interior index range.
        """
        out = []
        for d in range(2):
            x0 = other.axis(d)[0]
            pos = (x0 - (self.center[d] - self.L / 2)) / self.delta
            j = int(round(pos))
            if abs(pos - j) > 1e-7 or j < 1 or j + other.N - 1 > self.N:
                raise ValueError("sub-box is not aligned with or not inside the lattice")
            out.append(j - 1)
        return out[0], out[1]

    def restrict(self, values: np.ndarray, other: "Grid") -> np.ndarray:
        """Restrict a site field on this grid to the sites of ``other``."""
        o1, o2 = self.offset_of(other)
        return values[o1:o1 + other.N, o2:o2 + other.N].copy()


def make_grid(L: float, N: int, center=(0.0, 0.0)) -> Grid:
    return Grid(L=L, N=N, center=tuple(center))


def sine_transform(values: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DST-I over the first two axes (its own inverse).

    Trailing axes are treated as a batch, so ``(N, N, p)`` blocks transform
    column by column.
    """
    return sfft.dstn(values, type=1, norm="ortho", axes=(0, 1))


inverse_sine_transform = sine_transform


def mode_indices(N: int) -> np.ndarray:
    return np.arange(1, N + 1)


def laplacian_eigenvalues_1d(grid: Grid) -> np.ndarray:
    m = mode_indices(grid.N)
    return (4.0 / grid.delta**2) * np.sin(m * np.pi / (2 * (grid.N + 1))) ** 2


def laplacian_eigenvalues(grid: Grid) -> np.ndarray:
    """``(N, N)`` table of the discrete Dirichlet ``-Delta`` eigenvalues."""
    lam = laplacian_eigenvalues_1d(grid)
    return lam[:, None] + lam[None, :]


def laplacian_eigenvalue(grid: Grid, j: int, k: int) -> float:
    if not (1 <= j <= grid.N and 1 <= k <= grid.N):
        raise IndexError(f"mode ({j}, {k}) outside 1..{grid.N}")
    s = np.pi / (2 * (grid.N + 1))
    return (4.0 / grid.delta**2) * (np.sin(j * s) ** 2 + np.sin(k * s) ** 2)


def sine_mode(grid: Grid, j: int, k: int) -> np.ndarray:
    """``sin(pi j x'/L) sin(pi k y'/L)`` sampled on sites (x' from the box corner)."""
    idx = mode_indices(grid.N)
    a = np.sin(np.pi * j * idx / (grid.N + 1))
    b = np.sin(np.pi * k * idx / (grid.N + 1))
    return np.outer(a, b)


def _expand(mult: np.ndarray, values: np.ndarray) -> np.ndarray:
    return mult.reshape(mult.shape + (1,) * (values.ndim - 2))


def spectral_multiply(values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    """Apply a diagonal sine-basis multiplier (``(N, N)`` table) to a field."""
    coef = sine_transform(values)
    return sine_transform(coef * _expand(multiplier, coef))


def heat_apply(grid: Grid, t: float, g: np.ndarray) -> np.ndarray:
    """Exact discrete Dirichlet heat semigroup ``exp(t Delta_disc) g``."""
    if t < 0:
        raise ValueError(f"heat kernel needs t >= 0, got {t}")
    if t == 0:
        return np.array(g, copy=True)
    return spectral_multiply(g, np.exp(-t * laplacian_eigenvalues(grid)))


def laplacian_apply(grid: Grid, u: np.ndarray) -> np.ndarray:
    """5-point Dirichlet ``-Delta_disc u`` by direct stencil."""
    out = 4.0 * u
    out[1:] -= u[:-1]
    out[:-1] -= u[1:]
    out[:, 1:] -= u[:, :-1]
    out[:, :-1] -= u[:, 1:]
    return out / grid.delta**2


def laplacian_matrix(grid: Grid):
    """Sparse 5-point Dirichlet ``-Delta_disc`` (row-major site ordering)."""
    import scipy.sparse as sp

    n = grid.N
    d1 = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    eye = sp.identity(n)
    return ((sp.kron(d1, eye) + sp.kron(eye, d1)) / grid.delta**2).tocsr()
