"""Discrete-time Riccati recursions, LQ gains, and structural tests.

The backward recursion for the finite-horizon discrete LQ problem is

    P(t) = A'P(t+1)A + Q - A'P(t+1)B (B'P(t+1)B + R)^{-1} B'P(t+1)A
    L(t) = (B'P(t+1)B + R)^{-1} B'P(t+1)A

and the infinite-horizon solution is obtained as its fixed point,
iterating from ``X = Q``.  Stabilizability of (A, B) and detectability of
(Q, A) guarantee convergence to the unique stabilizing solution; both are
checked with PBH rank tests before iterating.
"""

import time
from dataclasses import dataclass

import numpy as np

from .exceptions import AssumptionError, RiccatiDivergenceError

#: relative singular-value cutoff for PBH rank decisions
PBH_RANK_TOL = 1e-8
#: eigenvalues of a symmetric factorization below this are treated as zero
FACTOR_EIG_TOL = 1e-12


def _sym(X: np.ndarray) -> np.ndarray:
    return (X + X.T) / 2.0


def _as_square(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def _check_pd(R: np.ndarray, name: str):
    eigmin = float(np.linalg.eigvalsh(_sym(R)).min())
    if eigmin <= 0.0:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {eigmin:.3e})")


@dataclass
class RiccatiSolution:
    """Stationary solution: value matrix, gain, and convergence info."""

    X: np.ndarray
    L: np.ndarray
    residual: float
    iterations: int


@dataclass
class RiccatiSchedule:
    """Finite-horizon schedule: X[t] for t = 0..N, L[t] for t = 0..N-1."""

    X: np.ndarray
    L: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.L)


def riccati_step(A, B, Q, R, P):
    """One backward step; returns (P at t, gain at t)."""
    BtP = B.T @ P
    G = BtP @ B + R
    M = BtP @ A
    L = np.linalg.solve(G, M)
    Pprev = _sym(A.T @ P @ A + Q - M.T @ L)
    return Pprev, L


def riccati_finite(A, B, Q, R, terminal, N: int) -> RiccatiSchedule:
    """Backward recursion over horizon ``N`` from terminal weight ``terminal``."""
    A = _as_square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _sym(_as_square(Q, "Q"))
    R = _sym(_as_square(R, "R"))
    terminal = _sym(_as_square(terminal, "terminal"))
    if N < 1:
        raise ValueError(f"horizon must be >= 1, got {N}")
    _check_pd(R, "R")
    n = A.shape[0]
    m = B.shape[1]
    X = np.empty((N + 1, n, n))
    L = np.empty((N, m, n))
    X[N] = terminal
    for t in range(N - 1, -1, -1):
        X[t], L[t] = riccati_step(A, B, Q, R, X[t + 1])
    return RiccatiSchedule(X=X, L=L)


def dare_residual(A, B, Q, R, X) -> float:
    """Infinity-norm fixed-point residual of ``X``."""
    Xn, _ = riccati_step(A, B, Q, R, X)
    return float(np.abs(Xn - X).max())


def riccati_infinite(A, B, Q, R, tol: float = 1e-12, max_iter: int = 10**6) -> RiccatiSolution:
    """Stationary Riccati solution by fixed-point iteration from ``X = Q``.

    Raises
    ------
    AssumptionError
        If (A, B) is not stabilizable or (Q, A) is not detectable.
    RiccatiDivergenceError
        If the iteration does not reach ``tol`` within ``max_iter`` steps;
        the error carries the last residual.
    """
    A = _as_square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _sym(_as_square(Q, "Q"))
    R = _sym(_as_square(R, "R"))
    _check_pd(R, "R")
    if not is_stabilizable(A, B):
        raise AssumptionError("(A, B) is not stabilizable")
    if not is_detectable(detectability_factor(Q), A):
        raise AssumptionError("(Q, A) is not detectable")

    X = Q.copy()
    residual = np.inf
    for k in range(1, int(max_iter) + 1):
        Xn, L = riccati_step(A, B, Q, R, X)
        residual = float(np.abs(Xn - X).max())
        X = Xn
        if residual < tol:
            rho = closed_loop_spectral_radius(A, B, L)
            if rho >= 1.0:
                raise RiccatiDivergenceError(
                    f"iteration converged to a non-stabilizing solution "
                    f"(closed-loop spectral radius {rho:.6f})",
                    residual,
                    k,
                )
            return RiccatiSolution(X=X, L=L, residual=dare_residual(A, B, Q, R, X), iterations=k)
    raise RiccatiDivergenceError(
        f"no convergence within {int(max_iter)} iterations (last residual {residual:.3e})",
        residual,
        int(max_iter),
    )


def closed_loop_spectral_radius(A, B, L) -> float:
    return float(np.abs(np.linalg.eigvals(A - B @ L)).max())


def is_stabilizable(A, B, rank_tol: float = PBH_RANK_TOL) -> bool:
    """PBH test: rank [A - lam*I, B] = n for every eigenvalue with |lam| >= 1."""
    A = _as_square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    eye = np.eye(n)
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-9:
            continue
        M = np.hstack([A - lam * eye, B.astype(complex)])
        sv = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(sv > rank_tol * sv[0]))
        if rank < n:
            return False
    return True


def is_detectable(C, A, rank_tol: float = PBH_RANK_TOL) -> bool:
    """PBH test for (C, A), run as stabilizability of the transposed pair."""
    A = _as_square(A, "A")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != A.shape[0]:
        raise ValueError(f"C has {C.shape[1]} columns, A is {A.shape[0]}x{A.shape[0]}")
    return is_stabilizable(A.T, C.T, rank_tol=rank_tol)


def detectability_factor(Q) -> np.ndarray:
    """A factor C with C'C = Q, from the symmetric eigendecomposition.

    Eigenvalues below ``FACTOR_EIG_TOL`` are discarded, so the factor has
    one row per significant mode of Q (possibly zero rows for Q = 0).
    """
    Q = _sym(_as_square(Q, "Q"))
    w, V = np.linalg.eigh(Q)
    keep = w > FACTOR_EIG_TOL
    return (V[:, keep] * np.sqrt(w[keep])).T


def cost_identity_residual(A, B, Q, R, schedule: RiccatiSchedule, xs, us, ws) -> float:
    """Residual of the completed-square cost identity along one trajectory.

    For any trajectory x(t+1) = A x(t) + B u(t) + w(t), the quadratic cost

        x(N)' P(N) x(N) + sum_t [ x(t)'Q x(t) + u(t)'R u(t) ]

    equals

        x(0)' P(0) x(0)
        + sum_t (u + L x)'(B'P(t+1)B + R)(u + L x)
        + sum_t 2 w(t)' P(t+1) (A x(t) + B u(t))
        + sum_t w(t)' P(t+1) w(t)

    where P, L come from the backward recursion.  Returns |lhs - rhs|.
    The trajectory is validated against the dynamics first.
    """
    A = _as_square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    ws = np.asarray(ws, dtype=float)
    N = schedule.horizon
    if xs.shape[0] != N + 1 or us.shape[0] != N or ws.shape[0] != N:
        raise ValueError("trajectory lengths do not match the schedule horizon")
    drift = max(
        float(np.abs(xs[t + 1] - (A @ xs[t] + B @ us[t] + ws[t])).max()) for t in range(N)
    )
    if drift > 1e-10:
        raise ValueError(f"trajectory inconsistent with dynamics (max defect {drift:.3e})")

    P = schedule.X
    L = schedule.L
    lhs = float(xs[N] @ P[N] @ xs[N])
    rhs = float(xs[0] @ P[0] @ xs[0])
    for t in range(N):
        x, u, w = xs[t], us[t], ws[t]
        lhs += float(x @ Q @ x + u @ R @ u)
        G = B.T @ P[t + 1] @ B + R
        z = u + L[t] @ x
        rhs += float(z @ G @ z)
        rhs += 2.0 * float(w @ P[t + 1] @ (A @ x + B @ u))
        rhs += float(w @ P[t + 1] @ w)
    return abs(lhs - rhs)


def timed(fn, *args, **kwargs):
    """Run ``fn`` and return (result, elapsed seconds)."""
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
