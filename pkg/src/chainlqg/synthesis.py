"""Controller synthesis for two- and three-subsystem chains.

Builds the optimal decentralized controllers for chain-structured LQG
problems in which controller i sees the state histories of subsystems
1..i, plus two baselines: the centralized LQR (full state, no structure)
and a suboptimal purely local controller that reads only the preceding
subsystem.

The decentralized optimum rests on a conditional-estimate decomposition:
the state splits into a part driven by the shared upstream noise and an
orthogonal residual private to each downstream controller.  Each part is
an independent LQ problem, so the controller is a cascade of Riccati
gains wired through internal estimator states (eta), and the per-step
cost is an additive sum of trace terms.
"""

import json
from dataclasses import dataclass

import numpy as np

from .blocks import Partition
from .exceptions import AssumptionError, ModelError
from .platoon_model import ChainSystem
from .riccati import (
    detectability_factor,
    is_detectable,
    is_stabilizable,
    riccati_finite,
    riccati_infinite,
)

MODE_TWO = "two_vehicle"
MODE_THREE = "three_vehicle"

CONTROLLER_FORMAT = "chainlqg-controller"
CONTROLLER_VERSION = 1


@dataclass(frozen=True)
class OptimalCostReport:
    """Analytical per-step cost of a synthesized controller.

    trace_terms lists the additive contributions (label, value); their sum
    is analytical_cost and each term is a trace of PSD products, hence
    nonnegative.
    """

    analytical_cost: float
    trace_terms: tuple

    def __post_init__(self):
        total = sum(v for _, v in self.trace_terms)
        if abs(total - self.analytical_cost) > 1e-9 * max(1.0, abs(total)):
            raise ValueError("analytical_cost must equal the sum of trace terms")
        for label, v in self.trace_terms:
            if v < -1e-9:
                raise ValueError(f"trace term {label} is negative: {v}")


def _trace_term(X: np.ndarray, W: np.ndarray) -> float:
    return float(np.trace(X @ W))


def _check_assumptions(A, B, Q, scope: str, stab_tag: str, det_tag: str):
    """PBH checks for one Riccati subproblem, with a named failure."""
    if not is_stabilizable(A, B):
        raise AssumptionError(
            f"assumption {stab_tag} failed: (A, B) is not stabilizable on {scope}"
        )
    C = detectability_factor(Q)
    if not is_detectable(C, A):
        raise AssumptionError(
            f"assumption {det_tag} failed: (Q, A) is not detectable on {scope}"
        )


def _tail_arrays(sys: ChainSystem, k: int):
    """Dense (A, B, Q, R) restricted to subsystem blocks k..M."""
    sp, ip = sys.state_partition, sys.input_partition
    M = sp.count
    ss = sp.span(k, M)
    us = ip.span(k, M)
    return (
        sys.A.data[ss, ss].copy(),
        sys.B.data[ss, us].copy(),
        sys.Q[ss, ss].copy(),
        sys.R[us, us].copy(),
    )


@dataclass
class DistributedController:
    """Dynamic decentralized controller with internal estimator states.

    For mode "two_vehicle" the estimator state eta holds the conditional
    estimate of x2 given the x1 history (dimension n2).  For mode
    "three_vehicle" eta stacks [eta1, eta2, eta3] with dimensions
    (n2, n3, n3): eta1 and eta2 estimate x2 and x3 from the x1 history,
    eta3 estimates the remaining x3 deviation from the (x1, x2) history.

    Gains: L1 is the full-chain Riccati gain, L2 the gain of the tail
    subproblem on blocks 2..M, L3 (three_vehicle only) the gain of the
    last block.  E1/E2 are the corresponding estimator update maps (the
    tail rows of each closed-loop matrix).

    The information flow is block lower triangular: u_i is computed from
    quantities measurable from the x_1..x_i histories only, and the
    arithmetic never touches later blocks, so invariance holds bitwise.
    """

    mode: str
    partition: Partition
    input_partition: Partition
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray | None
    E1: np.ndarray
    E2: np.ndarray | None
    alternate_tail: bool = False
    eta: np.ndarray = None

    def __post_init__(self):
        if self.mode not in (MODE_TWO, MODE_THREE):
            raise ModelError(f"unknown controller mode {self.mode!r}")
        sp, ip = self.partition, self.input_partition
        n, m = sp.total, ip.total
        self.L1 = np.asarray(self.L1, dtype=float)
        self.L2 = np.asarray(self.L2, dtype=float)
        if self.L1.shape != (m, n):
            raise ModelError(f"L1 must be {(m, n)}, got {self.L1.shape}")
        if self.mode == MODE_TWO:
            if sp.count != 2 or ip.count != 2:
                raise ModelError("two_vehicle mode needs exactly 2 blocks")
            n2, m2 = sp.sizes[1], ip.sizes[1]
            if self.L2.shape != (m2, n2):
                raise ModelError(f"L2 must be {(m2, n2)}, got {self.L2.shape}")
            if self.L3 is not None or self.E2 is not None:
                raise ModelError("L3/E2 are three_vehicle fields")
        else:
            if sp.count != 3 or ip.count != 3:
                raise ModelError("three_vehicle mode needs exactly 3 blocks")
            n2, n3 = sp.sizes[1], sp.sizes[2]
            m2, m3 = ip.sizes[1], ip.sizes[2]
            if self.L2.shape != (m2 + m3, n2 + n3):
                raise ModelError("L2 must cover blocks 2..3")
            self.L3 = np.asarray(self.L3, dtype=float)
            if self.L3.shape != (m3, n3):
                raise ModelError(f"L3 must be {(m3, n3)}, got {self.L3.shape}")
            self.E2 = np.asarray(self.E2, dtype=float)
            if self.E2.shape != (n3, n2 + n3):
                raise ModelError(f"E2 must be {(n3, n2 + n3)}, got {self.E2.shape}")
            if self.alternate_tail and n2 != n3:
                raise ModelError(
                    "the alternate tail-estimator form needs equal block sizes "
                    f"(n2 = {n2}, n3 = {n3})"
                )
        self.E1 = np.asarray(self.E1, dtype=float)
        k = self.eta_dim
        if self.E1.shape != (self._e1_rows, sp.sizes[0] + self._e1_rows):
            raise ModelError(f"E1 has shape {self.E1.shape}, expected "
                             f"{(self._e1_rows, sp.sizes[0] + self._e1_rows)}")
        if self.eta is None:
            self.eta = np.zeros(k)
        else:
            self.eta = np.asarray(self.eta, dtype=float)
            if self.eta.shape != (k,):
                raise ModelError(f"eta must have dimension {k}")

    @property
    def _e1_rows(self) -> int:
        return self.partition.total - self.partition.sizes[0]

    @property
    def eta_dim(self) -> int:
        if self.mode == MODE_TWO:
            return self.partition.sizes[1]
        return self.partition.sizes[1] + 2 * self.partition.sizes[2]

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        k = self.eta_dim
        return np.zeros(k) if batch is None else np.zeros((batch, k))

    def advance(self, eta, x):
        """One controller step: (eta(t), x(t)) -> (u(t), eta(t+1)).

        Pure function of its arguments; accepts a single state (1-D) or a
        batch of states stacked in rows (2-D).
        """
        x = np.asarray(x, dtype=float)
        eta = np.asarray(eta, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
            eta = eta[None, :]
        if x.shape[1] != self.partition.total:
            raise ModelError(
                f"state dimension {x.shape[1]} does not match partition total "
                f"{self.partition.total}"
            )
        sp, ip = self.partition, self.input_partition
        n1, m1 = sp.sizes[0], ip.sizes[0]
        if self.mode == MODE_TWO:
            x1, x2 = x[:, :n1], x[:, n1:]
            s = np.concatenate([x1, eta], axis=1)
            e2 = x2 - eta
            u1 = -(s @ self.L1[:m1].T)
            u2 = -(s @ self.L1[m1:].T) - e2 @ self.L2.T
            u = np.concatenate([u1, u2], axis=1)
            eta_next = s @ self.E1.T
        else:
            n2, n3 = sp.sizes[1], sp.sizes[2]
            m2 = ip.sizes[1]
            x1 = x[:, :n1]
            x2 = x[:, n1 : n1 + n2]
            x3 = x[:, n1 + n2 :]
            eta1 = eta[:, :n2]
            eta2 = eta[:, n2 : n2 + n3]
            eta3 = eta[:, n2 + n3 :]
            s = np.concatenate([x1, eta1, eta2], axis=1)
            e2 = x2 - (eta2 if self.alternate_tail else eta1)
            r2 = np.concatenate([e2, eta3], axis=1)
            e3 = x3 - eta2 - eta3
            u1 = -(s @ self.L1[:m1].T)
            u2 = -(s @ self.L1[m1 : m1 + m2].T) - r2 @ self.L2[:m2].T
            u3 = -(s @ self.L1[m1 + m2 :].T) - r2 @ self.L2[m2:].T - e3 @ self.L3.T
            u = np.concatenate([u1, u2, u3], axis=1)
            eta_next = np.concatenate([s @ self.E1.T, r2 @ self.E2.T], axis=1)
        if single:
            return u[0], eta_next[0]
        return u, eta_next

    def step(self, x) -> np.ndarray:
        """Stateful step: returns u(t) and advances the internal eta."""
        u, self.eta = self.advance(self.eta, x)
        return u

    def retarget(self, eta, delta):
        """Shift the internal estimates for a commonly known error jump.

        When the regulation target moves from r to r', the error state
        everyone measures jumps by delta = r - r'.  The reference
        schedule is broadcast, so conditional-mean estimates of the
        downstream errors shift by the same known offset.  The
        differential tail estimate is a difference of two conditional
        means of the same quantity and is left alone.
        """
        if eta is None:
            return None
        delta = np.asarray(delta, dtype=float)
        n1 = self.partition.sizes[0]
        shared = self.partition.total - n1
        out = np.array(eta, dtype=float, copy=True)
        out[..., :shared] += delta[..., n1:]
        return out

    def reset(self):
        self.eta = np.zeros(self.eta_dim)


@dataclass
class StaticController:
    """Memoryless controller u = -L x with an optional block read mask.

    structure_mask[i, j] (0-based blocks) says whether input block i may
    read state block j; masked-out entries of L are exactly zero.
    """

    L: np.ndarray
    structure_mask: np.ndarray | None = None
    partition: Partition | None = None
    input_partition: Partition | None = None

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        if self.structure_mask is not None:
            self.structure_mask = np.asarray(self.structure_mask, dtype=bool)
            if self.partition is None or self.input_partition is None:
                raise ModelError("a structure mask needs both partitions")
            sp, ip = self.partition, self.input_partition
            if self.structure_mask.shape != (ip.count, sp.count):
                raise ModelError("structure mask must be (input blocks, state blocks)")
            for i in range(ip.count):
                for j in range(sp.count):
                    if self.structure_mask[i, j]:
                        continue
                    piece = self.L[ip.span(i + 1), sp.span(j + 1)]
                    if np.any(piece != 0.0):
                        raise ModelError(
                            f"gain reads masked state block {j + 1} from input block {i + 1}"
                        )

    def initial_state(self, batch: int | None = None):
        return None

    def advance(self, state, x):
        x = np.asarray(x, dtype=float)
        return -(x @ self.L.T), state

    def step(self, x) -> np.ndarray:
        u, _ = self.advance(None, x)
        return u

    def retarget(self, state, delta):
        return state

    def reset(self):
        pass


def step_controller(ctrl, x):
    """Advance a controller one step against the measured state x.

    Returns (u, ctrl); for dynamic controllers the internal estimator
    state has been advanced in place.
    """
    return ctrl.step(x), ctrl


def synth_two_vehicle(sys: ChainSystem, tol: float = 1e-12, max_iter: int = 10**6):
    """Optimal decentralized controller for a two-subsystem chain.

    Requires (i) (A, B) stabilizable, (ii) (Q, A) detectable, and the
    same pair of conditions, (iii) and (iv), on the second-block
    subproblem (A22, B2, Q22, R22).  Returns the controller together with
    its analytical per-step cost Tr(X11 W1) + Tr(Y W2).
    """
    if sys.M != 2:
        raise ModelError(f"two-subsystem synthesis needs M = 2, got M = {sys.M}")
    A, B = sys.A.data, sys.B.data
    sp, ip = sys.state_partition, sys.input_partition
    n1 = sp.sizes[0]
    A22, B2, Q22, R22 = _tail_arrays(sys, 2)
    _check_assumptions(A, B, sys.Q, "blocks 1..2", "(i)", "(ii)")
    _check_assumptions(A22, B2, Q22, "block 2", "(iii)", "(iv)")
    full = riccati_infinite(A, B, sys.Q, sys.R, tol=tol, max_iter=max_iter)
    tail = riccati_infinite(A22, B2, Q22, R22, tol=tol, max_iter=max_iter)
    E1 = (A - B @ full.L)[n1:, :]
    ctrl = DistributedController(
        mode=MODE_TWO,
        partition=sp,
        input_partition=ip,
        L1=full.L,
        L2=tail.L,
        L3=None,
        E1=E1,
        E2=None,
    )
    W1 = sys.W[:n1, :n1]
    W2 = sys.W[n1:, n1:]
    terms = (
        ("Tr(X11 W1)", _trace_term(full.X[:n1, :n1], W1)),
        ("Tr(Y W2)", _trace_term(tail.X, W2)),
    )
    report = OptimalCostReport(sum(v for _, v in terms), terms)
    return ctrl, report


def synth_three_vehicle(
    sys: ChainSystem,
    tol: float = 1e-12,
    max_iter: int = 10**6,
    alternate_tail_estimator: bool = False,
):
    """Optimal decentralized controller for a three-subsystem chain.

    Requires, for each of the three nested subchains (blocks 1..3, 2..3,
    and 3), that (i) the (A, B) restriction is stabilizable and (ii) the
    (Q, A) restriction is detectable.  Cost is
    Tr(X1_11 W1) + Tr(X2_11 W2) + Tr(X3 W3).

    With alternate_tail_estimator the residual feeding the tail cascade is
    x2 - eta2 instead of x2 - eta1 (an alternative published form; it
    requires n2 = n3 and is not the default).
    """
    if sys.M != 3:
        raise ModelError(f"three-subsystem synthesis needs M = 3, got M = {sys.M}")
    A, B = sys.A.data, sys.B.data
    sp, ip = sys.state_partition, sys.input_partition
    n1, n2, n3 = sp.sizes
    At, Bt, Qt, Rt = _tail_arrays(sys, 2)
    A33, B3, Q33, R33 = _tail_arrays(sys, 3)
    _check_assumptions(A, B, sys.Q, "blocks 1..3", "(i)", "(ii)")
    _check_assumptions(At, Bt, Qt, "blocks 2..3", "(i)", "(ii)")
    _check_assumptions(A33, B3, Q33, "block 3", "(i)", "(ii)")
    full = riccati_infinite(A, B, sys.Q, sys.R, tol=tol, max_iter=max_iter)
    mid = riccati_infinite(At, Bt, Qt, Rt, tol=tol, max_iter=max_iter)
    last = riccati_infinite(A33, B3, Q33, R33, tol=tol, max_iter=max_iter)
    E1 = (A - B @ full.L)[n1:, :]
    E2 = (At - Bt @ mid.L)[n2:, :]
    ctrl = DistributedController(
        mode=MODE_THREE,
        partition=sp,
        input_partition=ip,
        L1=full.L,
        L2=mid.L,
        L3=last.L,
        E1=E1,
        E2=E2,
        alternate_tail=alternate_tail_estimator,
    )
    W1 = sys.W[:n1, :n1]
    W2 = sys.W[n1 : n1 + n2, n1 : n1 + n2]
    W3 = sys.W[n1 + n2 :, n1 + n2 :]
    terms = (
        ("Tr(X1_11 W1)", _trace_term(full.X[:n1, :n1], W1)),
        ("Tr(X2_11 W2)", _trace_term(mid.X[:n2, :n2], W2)),
        ("Tr(X3 W3)", _trace_term(last.X, W3)),
    )
    report = OptimalCostReport(sum(v for _, v in terms), terms)
    return ctrl, report


def synth_centralized(sys: ChainSystem, tol: float = 1e-12, max_iter: int = 10**6):
    """Centralized LQR on the full chain; cost Tr(X W)."""
    A, B = sys.A.data, sys.B.data
    _check_assumptions(A, B, sys.Q, f"blocks 1..{sys.M}", "(i)", "(ii)")
    full = riccati_infinite(A, B, sys.Q, sys.R, tol=tol, max_iter=max_iter)
    ctrl = StaticController(
        L=full.L,
        structure_mask=None,
        partition=sys.state_partition,
        input_partition=sys.input_partition,
    )
    terms = (("Tr(X W)", _trace_term(full.X, sys.W)),)
    report = OptimalCostReport(terms[0][1], terms)
    return ctrl, report


def synth_suboptimal_local(
    sys: ChainSystem, tol: float = 1e-12, max_iter: int = 10**6
) -> StaticController:
    """Purely local baseline: each subsystem reads only its predecessor.

    Subsystem i solves a Riccati problem on its own diagonal blocks
    (A_ii, B_i, Q_ii, R_i) and compensates the measured predecessor state
    through the one-step coupling:
    u_i = -(R_i + B_i' P_i B_i)^{-1} B_i' P_i (A_{i,i-1} x_{i-1} + A_ii x_i).
    The first subsystem runs plain LQR on its own block.  No estimation of
    downstream subsystems takes place, which is what makes it suboptimal
    on coupled chains.
    """
    sp, ip = sys.state_partition, sys.input_partition
    M = sp.count
    L = np.zeros((ip.total, sp.total))
    mask = np.zeros((M, M), dtype=bool)
    for i in range(1, M + 1):
        Aii = sys.A.block(i, i)
        Bi = sys.B.block(i, i)
        Qii = sys.Q[sp.span(i), sp.span(i)]
        Ri = sys.R[ip.span(i), ip.span(i)]
        local = riccati_infinite(Aii, Bi, Qii, Ri, tol=tol, max_iter=max_iter)
        gain_rows = ip.span(i)
        L[gain_rows, sp.span(i)] = local.L
        mask[i - 1, i - 1] = True
        if i > 1:
            G = np.linalg.solve(
                Ri + Bi.T @ local.X @ Bi, Bi.T @ local.X @ sys.A.block(i, i - 1)
            )
            L[gain_rows, sp.span(i - 1)] = G
            mask[i - 1, i - 2] = True
    return StaticController(
        L=L, structure_mask=mask, partition=sp, input_partition=ip
    )


@dataclass
class FiniteTwoVehicleController:
    """Time-varying decentralized controller over a finite horizon.

    Same wiring as the stationary two-subsystem controller, with gain
    schedules L1(t), L2(t) and estimator maps E1(t) for t = 0..N-1.
    """

    L1: np.ndarray  # (N, m, n)
    L2: np.ndarray  # (N, m2, n2)
    E1: np.ndarray  # (N, n2, n1 + n2)
    partition: Partition
    input_partition: Partition

    @property
    def horizon(self) -> int:
        return self.L1.shape[0]

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        n2 = self.partition.sizes[1]
        return np.zeros(n2) if batch is None else np.zeros((batch, n2))

    def advance(self, t: int, eta, x):
        if not 0 <= t < self.horizon:
            raise ModelError(f"step {t} outside horizon {self.horizon}")
        x = np.asarray(x, dtype=float)
        eta = np.asarray(eta, dtype=float)
        n1 = self.partition.sizes[0]
        m1 = self.input_partition.sizes[0]
        x1, x2 = x[..., :n1], x[..., n1:]
        s = np.concatenate([x1, eta], axis=-1)
        e2 = x2 - eta
        u1 = -(s @ self.L1[t, :m1].T)
        u2 = -(s @ self.L1[t, m1:].T) - e2 @ self.L2[t].T
        u = np.concatenate([u1, u2], axis=-1)
        return u, s @ self.E1[t].T

    def retarget(self, eta, delta):
        if eta is None:
            return None
        delta = np.asarray(delta, dtype=float)
        return eta + delta[..., self.partition.sizes[0] :]


def synth_two_vehicle_finite(sys: ChainSystem, N: int):
    """Finite-horizon (time-varying) two-subsystem synthesis.

    Horizon-N problem with terminal weight Q and x(0) = 0; the expected
    cost is sum_t Tr(X(t+1)_11 W1) + Tr(Y(t+1) W2).  Used chiefly by the
    desk-scale optimality check against brute-force policy minimization.
    """
    if sys.M != 2:
        raise ModelError(f"two-subsystem synthesis needs M = 2, got M = {sys.M}")
    if N < 1:
        raise ModelError(f"horizon must be at least 1, got {N}")
    A, B = sys.A.data, sys.B.data
    sp, ip = sys.state_partition, sys.input_partition
    n1 = sp.sizes[0]
    A22, B2, Q22, R22 = _tail_arrays(sys, 2)
    full = riccati_finite(A, B, sys.Q, sys.R, sys.Q, N)
    tail = riccati_finite(A22, B2, Q22, R22, Q22, N)
    E1 = np.stack([(A - B @ full.L[t])[n1:, :] for t in range(N)])
    ctrl = FiniteTwoVehicleController(
        L1=full.L, L2=tail.L, E1=E1, partition=sp, input_partition=ip
    )
    W1 = sys.W[:n1, :n1]
    W2 = sys.W[n1:, n1:]
    lead = sum(_trace_term(full.X[t + 1][:n1, :n1], W1) for t in range(N))
    second = sum(_trace_term(tail.X[t + 1], W2) for t in range(N))
    terms = (("sum Tr(X(t+1)_11 W1)", lead), ("sum Tr(Y(t+1) W2)", second))
    report = OptimalCostReport(lead + second, terms)
    return ctrl, report


def exact_finite_horizon_cost(sys: ChainSystem, ctrl, N: int) -> float:
    """Exact expected horizon-N cost of a closed loop started at x(0) = 0.

    Expands the expectation over per-step, per-channel unit noise
    impulses (every signal is linear in the noise, so the quadratic cost
    is the sum of the per-impulse costs).  No sampling involved.

    ctrl must expose initial_state() and advance(t, eta, x); stationary
    controllers can be passed through an adapter that drops t.
    """
    A, B = sys.A.data, sys.B.data
    F = detectability_factor(sys.W).T  # W = F F'
    total = 0.0
    for s in range(N):
        for c in range(F.shape[1]):
            x = np.zeros(sys.n)
            eta = ctrl.initial_state()
            cost = 0.0
            for t in range(N):
                u, eta = ctrl.advance(t, eta, x)
                cost += float(x @ sys.Q @ x + u @ sys.R @ u)
                x = A @ x + B @ u
                if t == s:
                    x = x + F[:, c]
            cost += float(x @ sys.Q @ x)
            total += cost
    return total


def closed_loop_maps(sys: ChainSystem, ctrl):
    """Joint closed-loop maps of plant plus controller state.

    Returns (Acl, G) with [x; eta](t+1) = Acl [x; eta](t) + G w(t).
    Columns are probed through the controller's own advance function, so
    the result reflects the as-implemented arithmetic.
    """
    A, B = sys.A.data, sys.B.data
    n = sys.n
    st0 = ctrl.initial_state()
    k = 0 if st0 is None else st0.shape[0]
    Acl = np.zeros((n + k, n + k))
    for j in range(n + k):
        x = np.zeros(n)
        eta = None if k == 0 else np.zeros(k)
        if j < n:
            x[j] = 1.0
        else:
            eta[j - n] = 1.0
        u, eta_next = ctrl.advance(eta, x)
        xn = A @ x + B @ u
        Acl[:n, j] = xn
        if k:
            Acl[n:, j] = eta_next
    G = np.vstack([np.eye(n), np.zeros((k, n))])
    return Acl, G


def _array_or_none(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def controller_to_dict(ctrl, report: OptimalCostReport | None = None, label: str | None = None) -> dict:
    """JSON-ready description of a controller (gains row-major)."""
    doc = {
        "format": CONTROLLER_FORMAT,
        "version": CONTROLLER_VERSION,
        "label": label,
    }
    if isinstance(ctrl, DistributedController):
        doc.update(
            kind="distributed",
            mode=ctrl.mode,
            state_sizes=list(ctrl.partition.sizes),
            input_sizes=list(ctrl.input_partition.sizes),
            L1=ctrl.L1.tolist(),
            L2=ctrl.L2.tolist(),
            L3=_array_or_none(ctrl.L3),
            E1=ctrl.E1.tolist(),
            E2=_array_or_none(ctrl.E2),
            alternate_tail=ctrl.alternate_tail,
            eta0=ctrl.eta.tolist(),
        )
    elif isinstance(ctrl, StaticController):
        doc.update(
            kind="static",
            state_sizes=None if ctrl.partition is None else list(ctrl.partition.sizes),
            input_sizes=None
            if ctrl.input_partition is None
            else list(ctrl.input_partition.sizes),
            gain=ctrl.L.tolist(),
            structure_mask=None
            if ctrl.structure_mask is None
            else ctrl.structure_mask.astype(int).tolist(),
        )
    else:
        raise ModelError(f"cannot serialize controller of type {type(ctrl).__name__}")
    if report is not None:
        doc["cost_report"] = {
            "analytical_cost": report.analytical_cost,
            "trace_terms": [[lbl, v] for lbl, v in report.trace_terms],
        }
    else:
        doc["cost_report"] = None
    return doc


def controller_from_dict(doc: dict):
    """Inverse of controller_to_dict; returns (controller, report, label)."""
    if doc.get("format") != CONTROLLER_FORMAT:
        raise ModelError("not a controller document (bad format field)")
    if doc.get("version") != CONTROLLER_VERSION:
        raise ModelError(f"unsupported controller version {doc.get('version')!r}")
    report = None
    if doc.get("cost_report"):
        rep = doc["cost_report"]
        report = OptimalCostReport(
            float(rep["analytical_cost"]),
            tuple((str(l), float(v)) for l, v in rep["trace_terms"]),
        )
    label = doc.get("label")
    if doc["kind"] == "distributed":
        sp = Partition(tuple(doc["state_sizes"]))
        ip = Partition(tuple(doc["input_sizes"]))
        ctrl = DistributedController(
            mode=doc["mode"],
            partition=sp,
            input_partition=ip,
            L1=np.array(doc["L1"], dtype=float),
            L2=np.array(doc["L2"], dtype=float),
            L3=None if doc["L3"] is None else np.array(doc["L3"], dtype=float),
            E1=np.array(doc["E1"], dtype=float),
            E2=None if doc["E2"] is None else np.array(doc["E2"], dtype=float),
            alternate_tail=bool(doc.get("alternate_tail", False)),
            eta=np.array(doc["eta0"], dtype=float),
        )
    elif doc["kind"] == "static":
        sp = None if doc["state_sizes"] is None else Partition(tuple(doc["state_sizes"]))
        ip = None if doc["input_sizes"] is None else Partition(tuple(doc["input_sizes"]))
        ctrl = StaticController(
            L=np.array(doc["gain"], dtype=float),
            structure_mask=None
            if doc["structure_mask"] is None
            else np.array(doc["structure_mask"], dtype=bool),
            partition=sp,
            input_partition=ip,
        )
    else:
        raise ModelError(f"unknown controller kind {doc['kind']!r}")
    return ctrl, report, label


def save_controller(path, ctrl, report=None, label=None):
    doc = controller_to_dict(ctrl, report, label)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_controller(path):
    with open(path, "r", encoding="utf-8") as fh:
        return controller_from_dict(json.load(fh))
