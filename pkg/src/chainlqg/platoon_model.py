"""Linearized heavy-duty-vehicle platoon model on a chain structure.

States are deviations from a constant-speed operating point: the lead
vehicle contributes its velocity deviation v1 (plus an auxiliary state
when integral action is enabled), and each follower i contributes the
spacing deviation d_{i-1,i} to its predecessor followed by its own
velocity deviation v_i.  Inputs are net engine-torque deviations in N*m,
one per vehicle.

Air-drag reduction from platooning enters through an affine percentage
model Phi(d) fitted on gaps d in [0, 65] m; a follower at gap d sees the
reduced drag coefficient k_d * (1 - Phi(d)/100).

Dynamics use a one-step forward-Euler discretization with sample time Ts:
spacing rows are d+ = d + Ts (v_{i-1} - v_i), velocity rows carry a
diagonal 1 + Ts * (linearized drag slope), and torque enters through
Ts * k_u.  The ``theta_form="increment"`` variant instead keeps the
velocity diagonals as pure Ts-scaled increments (no unit term, and the
follower slope formed as k_d * Phi(d0) rather than the reduced
coefficient); it is retained for comparison and is not the default.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .blocks import Partition, PartitionedMatrix
from .exceptions import ModelError, WeightError

AIR_DENSITY = 1.29  # kg/m^3
DRAG_COEFFICIENT = 0.6
FRONTAL_AREA = 10.0  # m^2
WHEEL_RADIUS = 0.5  # m
GRAVITY = 9.81  # m/s^2
ROLLING_RESISTANCE = 0.006

DEFAULT_MASSES = (30000.0, 40000.0, 30000.0)  # kg
DEFAULT_MAX_ENGINE_TORQUE = 2500.0  # N*m
DEFAULT_MAX_BRAKE_TORQUE = 60000.0  # N*m per axle
#: default torque penalty, per (N*m)^2; see CostWeights
DEFAULT_INPUT_WEIGHT = 2e-6
DEFAULT_NOISE_SIGMA = 0.05

THETA_FORMS = ("euler", "increment")


@dataclass(frozen=True)
class VehicleParams:
    """Physical coefficients of one vehicle, after mass normalization.

    k_u is the acceleration per unit net engine torque (1/(wheel radius *
    mass) by default), k_d the quadratic drag coefficient per unit mass
    (1/m).  k_b, k_fr and k_g parameterize braking, rolling resistance and
    grade in the underlying nonlinear model; the linearized chain model
    does not consume them but they are carried for completeness.
    """

    mass: float
    k_u: float
    k_d: float
    k_b: float = 1.0
    k_fr: float = GRAVITY * ROLLING_RESISTANCE
    k_g: float = GRAVITY
    max_engine_torque: float = DEFAULT_MAX_ENGINE_TORQUE
    max_brake_torque: float = DEFAULT_MAX_BRAKE_TORQUE

    def __post_init__(self):
        if self.mass <= 0:
            raise ModelError(f"vehicle mass must be positive, got {self.mass}")
        if self.k_u <= 0 or self.k_d < 0:
            raise ModelError("k_u must be positive and k_d nonnegative")
        if self.max_engine_torque <= 0 or self.max_brake_torque <= 0:
            raise ModelError("torque limits must be positive")

    @classmethod
    def from_mass(
        cls,
        mass: float,
        max_engine_torque: float = DEFAULT_MAX_ENGINE_TORQUE,
        max_brake_torque: float = DEFAULT_MAX_BRAKE_TORQUE,
        **overrides,
    ) -> "VehicleParams":
        """Defaults derived from the mass and standard HDV geometry."""
        k_u = overrides.pop("k_u", 1.0 / (WHEEL_RADIUS * mass))
        k_d = overrides.pop(
            "k_d", 0.5 * AIR_DENSITY * DRAG_COEFFICIENT * FRONTAL_AREA / mass
        )
        return cls(
            mass=mass,
            k_u=k_u,
            k_d=k_d,
            max_engine_torque=max_engine_torque,
            max_brake_torque=max_brake_torque,
            **overrides,
        )


@dataclass(frozen=True)
class AeroModel:
    """Affine drag-reduction percentage Phi(d) = kappa1 * d + kappa2."""

    kappa1: float = -0.47  # %/m
    kappa2: float = 45.0  # %
    valid_range: tuple = (0.0, 65.0)  # m


def phi(aero: AeroModel, d: float) -> float:
    """Drag-reduction percentage at gap ``d``, clamped to [0, 100].

    Gaps outside the fitted range are evaluated at the nearest boundary
    and a warning is issued.
    """
    lo, hi = aero.valid_range
    if d < lo or d > hi:
        warnings.warn(
            f"gap {d:.3f} m outside the fitted range [{lo}, {hi}] m; "
            "evaluating at the nearest boundary",
            stacklevel=2,
        )
        d = min(max(d, lo), hi)
    return float(np.clip(aero.kappa1 * d + aero.kappa2, 0.0, 100.0))


@dataclass(frozen=True)
class OperatingPoint:
    """Linearization point: common speed v0, gap d0 = tau * v0, sample time Ts."""

    v0: float = 19.44  # m/s
    tau: float = 1.0  # s (time-gap spacing policy)
    Ts: float = 0.1  # s
    d0: float | None = None  # m; defaults to tau * v0

    def __post_init__(self):
        if self.v0 <= 0:
            raise ModelError(f"operating speed must be positive, got {self.v0}")
        if self.Ts <= 0:
            raise ModelError(f"sample time must be positive, got {self.Ts}")
        if self.tau < 0:
            raise ModelError(f"time gap must be nonnegative, got {self.tau}")
        if self.d0 is None:
            object.__setattr__(self, "d0", self.tau * self.v0)
        elif self.d0 < 0:
            raise ModelError(f"operating gap must be nonnegative, got {self.d0}")


def _broadcast(value, count: int, name: str) -> tuple:
    if np.isscalar(value):
        out = (float(value),) * count
    else:
        out = tuple(float(v) for v in value)
        if len(out) != count:
            raise ModelError(f"{name} needs {count} entries, got {len(out)}")
    if any(v < 0 for v in out):
        raise ModelError(f"{name} entries must be nonnegative, got {out}")
    return out


@dataclass(frozen=True)
class CostWeights:
    """Per-vehicle quadratic weights.

    Follower weights (one entry per follower, vehicles 2..M): w_tau on the
    spacing-policy error (d - tau*v)^2, w_dv on the relative velocity
    (v_{i-1} - v_i)^2, w_d on d^2, w_v on v^2, w_u on the torque u^2.
    Lead weights: w1_v on v1^2 and w1_u on u1^2.  All nonnegative, and the
    torque weights are per (N*m)^2.
    """

    w_tau: tuple
    w_dv: tuple
    w_d: tuple
    w_v: tuple
    w_u: tuple
    w1_v: float = 1.0
    w1_u: float = DEFAULT_INPUT_WEIGHT

    def __post_init__(self):
        counts = {len(self.w_tau), len(self.w_dv), len(self.w_d), len(self.w_v), len(self.w_u)}
        if len(counts) != 1:
            raise ModelError("follower weight tuples must share one length")
        if self.w1_v < 0 or self.w1_u < 0:
            raise ModelError("lead weights must be nonnegative")

    @property
    def followers(self) -> int:
        return len(self.w_tau)

    @classmethod
    def uniform(
        cls,
        M: int,
        w_tau: float = 1.0,
        w_dv: float = 1.0,
        w_d: float = 0.01,
        w_v: float = 0.01,
        w_u: float = DEFAULT_INPUT_WEIGHT,
        w1_v: float = 1.0,
        w1_u: float = DEFAULT_INPUT_WEIGHT,
    ) -> "CostWeights":
        if M < 2:
            raise ModelError(f"a chain needs at least 2 vehicles, got {M}")
        k = M - 1
        return cls(
            w_tau=_broadcast(w_tau, k, "w_tau"),
            w_dv=_broadcast(w_dv, k, "w_dv"),
            w_d=_broadcast(w_d, k, "w_d"),
            w_v=_broadcast(w_v, k, "w_v"),
            w_u=_broadcast(w_u, k, "w_u"),
            w1_v=float(w1_v),
            w1_u=float(w1_u),
        )


@dataclass(frozen=True)
class PlatoonLayout:
    """Coordinate map of the stacked deviation state."""

    velocity_indices: tuple
    spacing_indices: tuple
    integral_index: int | None
    v0: float
    d0: float
    tau: float
    Ts: float


@dataclass
class ChainSystem:
    """A chain-structured discrete-time system with quadratic cost.

    A and B are block partitioned (A lower block bidiagonal, B block
    diagonal), Q/R the assembled state/input weights, W the block-diagonal
    process-noise covariance.  ``layout`` and the input bounds are present
    when the system came from :func:`build_platoon`.
    """

    A: PartitionedMatrix
    B: PartitionedMatrix
    Q: np.ndarray
    R: np.ndarray
    W: np.ndarray
    Ts: float = 1.0
    layout: PlatoonLayout | None = None
    input_low: np.ndarray | None = None
    input_high: np.ndarray | None = None

    def __post_init__(self):
        sp = self.A.row_partition
        ip = self.B.col_partition
        if self.A.col_partition.sizes != sp.sizes:
            raise ModelError("A must be square over the state partition")
        if self.B.row_partition.sizes != sp.sizes:
            raise ModelError("B row partition must match the state partition")
        if ip.count != sp.count:
            raise ModelError("one input block per subsystem is required")
        M = sp.count
        if M < 2:
            raise ModelError(f"a chain needs at least 2 subsystems, got {M}")
        for i in range(1, M + 1):
            for j in range(1, M + 1):
                if j in (i - 1, i):
                    continue
                if np.any(self.A.block(i, j) != 0.0):
                    raise ModelError(f"A block ({i}, {j}) must be zero in a chain")
        for i in range(1, M + 1):
            for j in range(1, M + 1):
                if i != j and np.any(self.B.block(i, j) != 0.0):
                    raise ModelError(f"B block ({i}, {j}) must be zero (block-diagonal input)")
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        n, m = sp.total, ip.total
        if self.Q.shape != (n, n) or self.W.shape != (n, n) or self.R.shape != (m, m):
            raise ModelError("Q/W must be n x n and R must be m x m")
        _check_psd(self.Q, "Q")
        eigmin = float(np.linalg.eigvalsh((self.R + self.R.T) / 2).min())
        if eigmin <= 0:
            raise WeightError(f"R must be positive definite (min eigenvalue {eigmin:.3e})")
        Wp = PartitionedMatrix(self.W, sp, sp)
        for i in range(1, M + 1):
            for j in range(1, M + 1):
                if i != j and np.any(Wp.block(i, j) != 0.0):
                    raise ModelError("W must be block diagonal over the state partition")
            _check_psd(Wp.block(i, i), f"W block {i}")
        if self.input_low is not None:
            self.input_low = np.asarray(self.input_low, dtype=float)
        if self.input_high is not None:
            self.input_high = np.asarray(self.input_high, dtype=float)

    @property
    def M(self) -> int:
        return self.A.row_partition.count

    @property
    def n(self) -> int:
        return self.A.row_partition.total

    @property
    def m(self) -> int:
        return self.B.col_partition.total

    @property
    def state_partition(self) -> Partition:
        return self.A.row_partition

    @property
    def input_partition(self) -> Partition:
        return self.B.col_partition

    def Q_part(self) -> PartitionedMatrix:
        return PartitionedMatrix(self.Q, self.state_partition, self.state_partition)

    def R_part(self) -> PartitionedMatrix:
        return PartitionedMatrix(self.R, self.input_partition, self.input_partition)

    def W_part(self) -> PartitionedMatrix:
        return PartitionedMatrix(self.W, self.state_partition, self.state_partition)

    @staticmethod
    def from_arrays(A, B, Q, R, W, state_sizes, input_sizes, **kwargs) -> "ChainSystem":
        sp = Partition(tuple(state_sizes))
        ip = Partition(tuple(input_sizes))
        return ChainSystem(
            A=PartitionedMatrix(A, sp, sp),
            B=PartitionedMatrix(B, sp, ip),
            Q=Q,
            R=R,
            W=W,
            **kwargs,
        )


def _check_psd(Q: np.ndarray, name: str, tol: float = 1e-10):
    eigmin = float(np.linalg.eigvalsh((Q + Q.T) / 2).min())
    if eigmin < -tol:
        raise WeightError(f"{name} is indefinite (eigenvalue {eigmin:.6e})")


def follower_cost_block(w_tau: float, w_dv: float, w_d: float, w_v: float, tau: float) -> np.ndarray:
    """3x3 weight block over (v_{i-1}, d_{i-1,i}, v_i) for one follower.

    Sum of the rank-one penalties w_dv (v_{i-1} - v_i)^2 and
    w_tau (d - tau v_i)^2 plus the diagonal terms w_d d^2 and w_v v_i^2.
    """
    return np.array(
        [
            [w_dv, 0.0, -w_dv],
            [0.0, w_d + w_tau, -tau * w_tau],
            [-w_dv, -tau * w_tau, tau**2 * w_tau + w_dv + w_v],
        ]
    )


def _state_layout(M: int, integral_action: bool):
    sizes = []
    vel = []
    spc = []
    integral = None
    pos = 0
    if integral_action:
        sizes.append(2)
        integral = 0
        vel.append(1)
        pos = 2
    else:
        sizes.append(1)
        vel.append(0)
        pos = 1
    for _ in range(2, M + 1):
        sizes.append(2)
        spc.append(pos)
        vel.append(pos + 1)
        pos += 2
    return tuple(sizes), tuple(vel), tuple(spc), integral


def build_cost(weights: CostWeights, op: OperatingPoint, M: int, integral_action: bool = False):
    """Assemble (Q, R) over the stacked state from per-vehicle weights.

    Follower blocks overlap on shared velocity coordinates and are summed
    there; the auxiliary integral-action state carries no weight.
    """
    if M < 2:
        raise ModelError(f"a chain needs at least 2 vehicles, got {M}")
    if weights.followers != M - 1:
        raise ModelError(
            f"weights describe {weights.followers + 1} vehicles but M = {M}"
        )
    sizes, vel, spc, _ = _state_layout(M, integral_action)
    n = sum(sizes)
    Q = np.zeros((n, n))
    Q[vel[0], vel[0]] += weights.w1_v
    for k in range(M - 1):
        coords = np.array([vel[k], spc[k], vel[k + 1]])
        block = follower_cost_block(
            weights.w_tau[k], weights.w_dv[k], weights.w_d[k], weights.w_v[k], op.tau
        )
        Q[np.ix_(coords, coords)] += block
    R = np.diag([weights.w1_u, *weights.w_u])
    _check_psd(Q, "assembled Q")
    return Q, R


def build_platoon(
    params,
    aero: AeroModel,
    op: OperatingPoint,
    weights: CostWeights | None = None,
    noise_sigma=DEFAULT_NOISE_SIGMA,
    integral_action: bool = False,
    theta_form: str = "euler",
) -> ChainSystem:
    """Linearized platoon chain for M = len(params) vehicles.

    Velocity diagonals use the reduced drag coefficient of a trailing
    vehicle at the operating gap; the gap-coupling term is
    delta_i = -Ts * kappa1 * k_d,i * v0^2.  With ``integral_action`` the
    lead block becomes [[0, -1], [0, 1]] over (aux, v1) with torque on the
    velocity row only.
    """
    params = list(params)
    M = len(params)
    if M < 2:
        raise ModelError(f"a platoon needs at least 2 vehicles, got {M}")
    if theta_form not in THETA_FORMS:
        raise ModelError(f"theta_form must be one of {THETA_FORMS}, got {theta_form!r}")
    if weights is None:
        weights = CostWeights.uniform(M)
    Ts, v0, d0 = op.Ts, op.v0, op.d0
    phi0 = phi(aero, d0)

    def theta(p: VehicleParams, lead: bool) -> float:
        if theta_form == "increment":
            if lead:
                return Ts * (1.0 - 2.0 * p.k_d * v0)
            return -Ts * 2.0 * p.k_d * phi0 * v0
        kd = p.k_d if lead else p.k_d * (1.0 - phi0 / 100.0)
        return 1.0 - Ts * 2.0 * kd * v0

    sizes, vel, spc, integral = _state_layout(M, integral_action)
    A_grid = [[None] * M for _ in range(M)]
    B_grid = [[None] * M for _ in range(M)]

    if integral_action:
        A_grid[0][0] = np.array([[0.0, -1.0], [0.0, 1.0]])
        B_grid[0][0] = np.array([[0.0], [Ts * params[0].k_u]])
    else:
        A_grid[0][0] = np.array([[theta(params[0], lead=True)]])
        B_grid[0][0] = np.array([[Ts * params[0].k_u]])

    for i in range(1, M):
        p = params[i]
        delta = -Ts * aero.kappa1 * p.k_d * v0**2
        A_grid[i][i] = np.array([[1.0, -Ts], [delta, theta(p, lead=False)]])
        B_grid[i][i] = np.array([[0.0], [Ts * p.k_u]])
        pred_width = sizes[i - 1]
        coupling = np.zeros((2, pred_width))
        coupling[0, pred_width - 1] = Ts  # spacing row reads the predecessor velocity
        A_grid[i][i - 1] = coupling

    sp = Partition(sizes)
    ip = Partition((1,) * M)
    A = PartitionedMatrix.from_blocks(A_grid, sp, sp)
    B = PartitionedMatrix.from_blocks(B_grid, sp, ip)
    Q, R = build_cost(weights, op, M, integral_action)

    sigmas = _broadcast(noise_sigma, M, "noise_sigma")
    W = np.zeros((sum(sizes), sum(sizes)))
    pos = 0
    for i, nb in enumerate(sizes):
        W[pos : pos + nb, pos : pos + nb] = sigmas[i] ** 2 * np.eye(nb)
        pos += nb

    layout = PlatoonLayout(
        velocity_indices=vel,
        spacing_indices=spc,
        integral_index=integral,
        v0=v0,
        d0=d0,
        tau=op.tau,
        Ts=Ts,
    )
    return ChainSystem(
        A=A,
        B=B,
        Q=Q,
        R=R,
        W=W,
        Ts=Ts,
        layout=layout,
        input_low=np.array([-p.max_brake_torque for p in params]),
        input_high=np.array([p.max_engine_torque for p in params]),
    )


def default_platoon(
    M: int = 3,
    masses=None,
    weights: CostWeights | None = None,
    noise_sigma=DEFAULT_NOISE_SIGMA,
    integral_action: bool = False,
    theta_form: str = "euler",
) -> ChainSystem:
    """Convenience constructor with the stock masses and operating point."""
    if masses is None:
        if M > len(DEFAULT_MASSES):
            raise ModelError(f"no default masses for M = {M}; pass them explicitly")
        masses = DEFAULT_MASSES[:M]
    params = [VehicleParams.from_mass(m) for m in masses]
    return build_platoon(
        params,
        AeroModel(),
        OperatingPoint(),
        weights=weights,
        noise_sigma=noise_sigma,
        integral_action=integral_action,
        theta_form=theta_form,
    )
