"""Lowest eigenpairs of :class:`MagneticOperator`.

* ``lanczos``: Krylov-Schur restarted Lanczos with full reorthogonalization and
  deflation rounds that recover the missing members of degenerate eigenspaces.
* ``lobpcg``: block preconditioned conjugate gradient with the fast Dirichlet
  Poisson solver as preconditioner; much cheaper on fine grids.
* ``dense_oracle``: full diagonalization for small grids.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .grid import Grid, laplacian_eigenvalues, sine_transform, spectral_multiply
from .operator import MagneticOperator, apply


class ConvergenceError(RuntimeError):
    """Raised when an eigen-solve does not reach its residual contract."""


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    eigenvectors: np.ndarray | None = None  # (N, N, k)
    converged: np.ndarray | None = None
    clusters: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def all_converged(self) -> bool:
        return self.converged is None or bool(np.all(self.converged))

    def lambda1(self) -> float:
        return float(self.eigenvalues[0])


def cluster_groups(values, rel_gap: float = 1e-3) -> list[list[int]]:
    """Group sorted eigenvalues whose consecutive gaps are below ``rel_gap * spread``."""
    values = np.asarray(values)
    if values.size == 0:
        return []
    spread = float(values[-1] - values[0])
    tol = rel_gap * spread
    groups = [[0]]
    for i in range(1, values.size):
        if values[i] - values[i - 1] < tol or (spread == 0.0):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _finish(H, vals, vecs, tol, solver, extra=None) -> SpectrumResult:
    """Sort by (value, index), compute true residuals, annotate clusters."""
    order = np.lexsort((np.arange(vals.size), vals))
    vals = np.asarray(vals)[order]
    vecs = vecs[:, order]
    N = H.grid.N
    X = vecs.reshape(N, N, -1)
    R = apply(H, X) - X * vals[None, None, :]
    res = np.linalg.norm(R.reshape(N * N, -1), axis=0)
    conv = res <= tol * np.maximum(1.0, np.abs(vals))
    prov = {"solver": solver, "N": N, "L": H.grid.L, "operator": H.description}
    if extra:
        prov.update(extra)
    return SpectrumResult(vals, res, X, conv, cluster_groups(vals), prov)


# ---------------------------------------------------------------- Lanczos

def _orth(w, blocks):
    """Two passes of classical Gram-Schmidt against orthonormal column blocks."""
    coefs = []
    for B in blocks:
        if B is None or B.shape[1] == 0:
            coefs.append(None)
            continue
        c = B.conj().T @ w
        w = w - B @ c
        coefs.append(c)
    for i, B in enumerate(blocks):
        if B is None or B.shape[1] == 0:
            continue
        c = B.conj().T @ w
        w = w - B @ c
        coefs[i] = coefs[i] + c
    return w, coefs


def _krylov_schur(matvec, n, k, tol, m, locked, v0, max_restarts, dtype):
    """Lowest ``k`` Ritz pairs of a Hermitian map, deflated against ``locked``."""
    V = np.zeros((n, m + 1), dtype=dtype)
    T = np.zeros((m, m), dtype=dtype)
    v, _ = _orth(v0.astype(dtype), [locked])
    V[:, 0] = v / np.linalg.norm(v)
    j0 = 0
    theta = S = None
    beta = 0.0
    matvecs = 0
    for restart in range(max_restarts + 1):
        for j in range(j0, m):
            w = matvec(V[:, j])
            matvecs += 1
            w, (_, c) = _orth(w, [locked, V[:, :j + 1]])
            T[:j + 1, j] = c
            beta = np.linalg.norm(w)
            if beta < 1e-13 * max(1.0, np.abs(c).max()):
                # invariant subspace: continue with a fresh direction
                r = np.random.default_rng(j + 7919 * restart).standard_normal(n).astype(dtype)
                w, _ = _orth(r, [locked, V[:, :j + 1]])
                beta_new = np.linalg.norm(w)
                V[:, j + 1] = w / beta_new
                if j + 1 < m:
                    T[j + 1, j] = 0.0
                beta = 0.0
                continue
            V[:, j + 1] = w / beta
            if j + 1 < m:
                T[j + 1, j] = beta
        Th = 0.5 * (T + T.conj().T)
        theta, S = np.linalg.eigh(Th)
        est = np.abs(beta * S[m - 1, :])
        ok = est[:k] <= tol * np.maximum(1.0, np.abs(theta[:k]))
        if np.all(ok) or restart == max_restarts:
            break
        p = min(m - 2, max(k + (m - k) // 2, k + 1))
        Y = V[:, :m] @ S[:, :p]
        b = beta * S[m - 1, :p]
        V[:, :p] = Y
        V[:, p] = V[:, m]
        T[:] = 0.0
        T[:p, :p] = np.diag(theta[:p])
        T[p, :p] = b
        T[:p, p] = np.conj(b)
        # column p is recomputed by the next expansion step; keep coupling rows
        j0 = p
        # the expansion overwrites T[:p+1, p], which reproduces conj(b) up to rounding
    X = V[:, :m] @ S[:, :k]
    return theta[:k], X, matvecs, restart


def lanczos_eigs(H: MagneticOperator, k: int = 1, tol: float = 1e-8, seed: int = 0,
                 m: int | None = None, max_restarts: int = 500, max_rounds: int = 4):
    n = H.dim
    N = H.grid.N
    dtype = float if H.is_real else complex
    shift = H.shift if np.isfinite(H.shift) else 0.0

    def matvec(x):
        u = x.reshape(N, N)
        return (apply(H, u) + shift * u).ravel()

    m = min(n - 1, m or max(60, 3 * k + 20))
    # an inner tolerance a bit tighter than the contract, since residual
    # estimates can lag the true residuals; tighten further if they do
    inner_tol = tol / 4
    for attempt in range(3):
        res = _lanczos_pass(H, matvec, n, k, tol, inner_tol, m, seed + attempt, max_restarts,
                            max_rounds, shift, dtype)
        if res.all_converged:
            break
        inner_tol /= 10
    res.provenance["attempts"] = attempt + 1
    return res


def _lanczos_pass(H, matvec, n, k, tol, inner_tol, m, seed, max_restarts, max_rounds, shift, dtype):
    rng = np.random.default_rng(seed)
    locked = np.zeros((n, 0), dtype=dtype)
    vals = np.zeros(0)
    total = 0
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        v0 = rng.standard_normal(n)
        if dtype is complex:
            v0 = v0 + 1j * rng.standard_normal(n)
        want = min(k, n - locked.shape[1])
        if want <= 0:
            break
        th, X, mv, _ = _krylov_schur(matvec, n, want, inner_tol, min(m, n - locked.shape[1] - 1),
                                     locked, v0, max_restarts, dtype)
        total += mv
        th = th - shift
        if vals.size >= k and th[0] >= vals[k - 1] - tol * max(1.0, abs(vals[k - 1])):
            break
        locked = np.hstack([locked, X])
        vals = np.concatenate([vals, th])
        order = np.argsort(vals, kind="stable")
        vals, locked = vals[order], locked[:, order]
    # final Rayleigh-Ritz over the union to restore exact orthogonality
    Q, _ = np.linalg.qr(locked)
    AQ = np.stack([matvec(Q[:, i]) for i in range(Q.shape[1])], axis=1) - shift * Q
    G = Q.conj().T @ AQ
    w, C = np.linalg.eigh(0.5 * (G + G.conj().T))
    return _finish(H, w[:k], Q @ C[:, :k], tol, "lanczos",
                   {"iterations": total, "rounds": rounds})


# ---------------------------------------------------------------- LOBPCG

def poisson_preconditioner(grid: Grid, sigma: float):
    """``(-Delta_disc + sigma)^{-1}`` by the fast sine solver."""
    lam = 1.0 / (laplacian_eigenvalues(grid) + sigma)

    def prec(R):
        return spectral_multiply(R, lam)
    return prec


def lu_preconditioner(H: MagneticOperator, tau: float):
    """``(H - tau)^{-1}`` through a sparse LU factorization."""
    from scipy.sparse import identity
    from scipy.sparse.linalg import splu

    M = H.to_sparse()
    lu = splu((M - tau * identity(M.shape[0], format="csc")).tocsc())
    n = H.dim

    def prec(R):
        out = lu.solve(np.ascontiguousarray(R.reshape(n, -1)))
        return out.reshape(R.shape)
    return prec


def coarsen(H: MagneticOperator) -> MagneticOperator:
    """Operator on the grid with every other site (requires odd N).

    Coarse links carry the product of the two fine link phases they span;
    the potential is sampled at the retained sites.
    """
    N = H.grid.N
    Nc = (N - 1) // 2
    g = H.grid
    gc = Grid(g.L, Nc, g.center)
    U1 = H.U1[0::2, 1::2] * H.U1[1::2, 1::2]
    U2 = H.U2[1::2, 0::2] * H.U2[1::2, 1::2]
    V = H.potential[1::2, 1::2]
    return MagneticOperator(gc, U1, U2, V, -float(np.min(V)), H.description + "/coarse")


def prolongate(Xc: np.ndarray, N: int) -> np.ndarray:
    """Sine interpolation of ``(Nc, Nc, p)`` fields to ``N = 2 Nc + 1``."""
    Nc = Xc.shape[0]
    coef = sine_transform(Xc)
    big = np.zeros((N, N) + Xc.shape[2:], dtype=coef.dtype)
    big[:Nc, :Nc] = coef * ((N + 1) / (Nc + 1))
    return sine_transform(big)


def _herm(M):
    return M.T.conj() if np.iscomplexobj(M) else M.T


def _orthonormalize(S, AS=None, drop: float = 1e-10):
    """Orthonormal basis of span(S) by the Gram eigendecomposition.

    Columns are normalized first; directions with Gram eigenvalue below
    ``drop`` (relative) are discarded so that rescaling cannot amplify
    rounding errors.
    """
    nrm = np.linalg.norm(S, axis=0)
    ok = nrm > 0
    S = S[:, ok] / nrm[ok]
    AS = None if AS is None else AS[:, ok] / nrm[ok]
    G = _herm(S) @ S
    G = 0.5 * (G + _herm(G))
    w, U = np.linalg.eigh(G)
    keep = w > drop * max(w.max(), 1e-300)
    T = U[:, keep] / np.sqrt(w[keep])
    return S @ T, (None if AS is None else AS @ T)


def _project_out(X, AX, S, AS):
    """Remove span(X) from S twice, keeping ``AS`` consistent; drop collapsed columns."""
    n0 = np.linalg.norm(S, axis=0)
    for _ in range(2):
        c = _herm(X) @ S
        S = S - X @ c
        AS = AS - AX @ c
    keep = np.linalg.norm(S, axis=0) > 1e-10 * np.maximum(n0, 1e-300)
    return S[:, keep], AS[:, keep]


def lobpcg_eigs(H: MagneticOperator, k: int = 1, tol: float = 1e-8, seed: int = 0,
                block: int | None = None, max_iter: int = 2000, X0: np.ndarray | None = None,
                precond: str = "auto", sigma: float | None = None, tau: float | None = None,
                multilevel: bool = True, min_coarse: int = 63):
    """Preconditioned block eigensolver (LOBPCG with soft locking).

    ``precond`` is ``poisson`` (free Laplacian, default for real operators) or
    ``lu`` (factorization of ``H - tau``, default with a magnetic field). With
    ``multilevel`` the start block is interpolated from the same solve on the
    coarsened operator, which also supplies ``tau``. ``X0`` may give an explicit
    warm start of shape ``(N, N, p)``.
    """
    N = H.grid.N
    n = H.dim
    dtype = float if H.is_real else complex
    bs = block or (k + 2 if k < 8 else k + 4)
    bs = min(bs, n // 3)
    if precond == "auto":
        precond = "poisson" if H.is_real else "lu"
    coarse_iters = 0
    coarse_est = None
    if X0 is None and multilevel and N % 2 == 1 and (N - 1) // 2 >= min_coarse:
        rc = lobpcg_eigs(coarsen(H), k, max(tol, 1e-4), seed, bs, max_iter, None,
                         precond, sigma, tau, True, min_coarse)
        X0 = prolongate(rc.eigenvectors, N)
        coarse_iters = rc.provenance["iterations"] + rc.provenance.get("coarse_iterations", 0)
        coarse_est = float(rc.eigenvalues[0])
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, N, bs))
    if dtype is complex:
        X = X + 1j * rng.standard_normal((N, N, bs))
    if X0 is not None:
        X0 = np.asarray(X0).reshape(N, N, -1)
        p = min(bs, X0.shape[2])
        X[:, :, :p] = X0[:, :, :p] * (np.sqrt(n) / np.linalg.norm(X0[:, :, :p].reshape(n, p), axis=0))
    if precond == "poisson":
        if sigma is None:
            sigma = max(1.0, 0.25 * float(np.max(np.abs(H.potential))))
        prec = poisson_preconditioner(H.grid, sigma)
    elif precond == "lu":
        if tau is None:
            base = coarse_est if coarse_est is not None else float(np.min(H.potential))
            tau = base - max(1.0, 0.1 * abs(base))
        prec = lu_preconditioner(H, tau)
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    def A(Y):
        return apply(H, Y.reshape(N, N, -1)).reshape(n, -1)

    X, _ = _orthonormalize(X.reshape(n, bs).astype(dtype))
    AX = A(X)
    G = _herm(X) @ AX
    theta, C = np.linalg.eigh(0.5 * (G + _herm(G)))
    X = X @ C
    AX = AX @ C
    P = AP = None
    it = 0
    for it in range(1, max_iter + 1):
        R = AX - X * theta[None, :]
        res = np.linalg.norm(R, axis=0)
        conv = res <= tol * np.maximum(1.0, np.abs(theta))
        if np.all(conv[:k]):
            break
        active = ~conv
        W = prec(R[:, active].reshape(N, N, -1)).reshape(n, -1)
        AW = A(W)
        if P is None:
            S, AS = W, AW
        else:
            S = np.concatenate([W, P[:, active]], axis=1)
            AS = np.concatenate([AW, AP[:, active]], axis=1)
        S, AS = _project_out(X, AX, S, AS)
        S, AS = _orthonormalize(S, AS)
        S, AS = _project_out(X, AX, S, AS)
        S, AS = _orthonormalize(S, AS)
        if S.shape[1] == 0:
            P = AP = None
            continue
        Q = np.concatenate([X, S], axis=1)
        AQ = np.concatenate([AX, AS], axis=1)
        G = _herm(Q) @ AQ
        M = _herm(Q) @ Q
        G, M = 0.5 * (G + _herm(G)), 0.5 * (M + _herm(M))
        if np.abs(M - np.eye(M.shape[0])).max() > 1e-8:
            try:
                w, C = sla.eigh(G, M)
            except np.linalg.LinAlgError:
                P = AP = None
                X, AX = _orthonormalize(X, AX)
                G = _herm(X) @ AX
                theta, C = np.linalg.eigh(0.5 * (G + _herm(G)))
                X, AX = X @ C, AX @ C
                continue
        else:
            w, C = np.linalg.eigh(G)
        C = C[:, :bs]
        P = S @ C[bs:]
        AP = AS @ C[bs:]
        X = Q @ C
        AX = AQ @ C
        theta = w[:bs]
    extra = {"iterations": it, "block": bs, "preconditioner": precond,
             "coarse_iterations": coarse_iters}
    if precond == "lu":
        extra["tau"] = tau
    else:
        extra["sigma"] = sigma
    return _finish(H, theta[:k], X[:, :k], tol, "lobpcg", extra)


# ---------------------------------------------------------------- front ends

def lowest_eigs(H: MagneticOperator, k: int = 1, tol: float = 1e-8, method: str = "auto",
                seed: int = 0, strict: bool = False, **kw) -> SpectrumResult:
    """Lowest ``k`` eigenpairs with residuals ``<= tol * max(1, |lambda|)``.

    ``method`` is ``lanczos``, ``lobpcg`` or ``auto`` (Lanczos for small grids).
    Unconverged pairs are flagged in ``converged``; with ``strict`` a
    :class:`ConvergenceError` is raised instead.
    """
    if not 1 <= k <= 32:
        raise ValueError(f"k must be in 1..32, got {k}")
    if k > H.dim - 2:
        raise ValueError("k too large for the grid")
    if method == "auto":
        method = "lanczos" if H.grid.N <= 48 else "lobpcg"
    t0 = time.perf_counter()
    if method == "lanczos":
        res = lanczos_eigs(H, k, tol, seed=seed, **kw)
    elif method == "lobpcg":
        res = lobpcg_eigs(H, k, tol, seed=seed, **kw)
    else:
        raise ValueError(f"unknown method {method!r}")
    res.provenance["wall_ms"] = 1e3 * (time.perf_counter() - t0)
    res.provenance["tol"] = tol
    if strict and not res.all_converged:
        raise ConvergenceError(
            f"{method}: residuals {res.residuals} exceed tol {tol} after "
            f"{res.provenance.get('iterations')} iterations")
    return res


def dense_matrix(H: MagneticOperator) -> np.ndarray:
    N = H.grid.N
    E = np.eye(N * N).reshape(N, N, N * N)
    M = apply(H, E.astype(complex)).reshape(N * N, N * N)
    return M


def dense_oracle(H: MagneticOperator, k: int | None = None) -> SpectrumResult:
    """Full diagonalization of the matrix assembled column by column from ``apply``."""
    if H.grid.N > 16:
        raise ValueError(f"dense oracle limited to N <= 16, got N={H.grid.N}")
    M = dense_matrix(H)
    w, U = sla.eigh(0.5 * (M + M.conj().T))
    k = w.size if k is None else k
    return _finish(H, w[:k], U[:, :k], 1e-9, "dense", {"hermitian_defect": float(np.abs(M - M.conj().T).max())})


def rayleigh_quotient(H: MagneticOperator, u: np.ndarray) -> float:
    nrm = np.vdot(u, u).real
    if nrm == 0:
        raise ValueError("Rayleigh quotient of the zero vector")
    q = np.vdot(u, apply(H, u))
    if abs(q.imag) > 1e-10 * max(1.0, abs(q)):
        raise ValueError("Rayleigh quotient is not real; operator is not Hermitian")
    return float(q.real / nrm)


def window_eigs(H: MagneticOperator, sigma: float, k: int = 16, tol: float = 1e-10):
    """Eigenvalues nearest ``sigma`` by shift-invert on a sparse LU factorization.

    Only meant for verification runs on moderate grids (interior spectrum).
    """
    from scipy.sparse.linalg import eigsh

    M = H.to_sparse()
    vals, vecs = eigsh(M, k=k, sigma=sigma, which="LM", tol=tol)
    return _finish(H, np.real(vals), vecs, max(tol, 1e-8), "shift-invert", {"sigma": sigma})
