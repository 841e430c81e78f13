"""Closed-loop simulation, Monte Carlo replication, and metric extraction.

Simulation runs in deviation coordinates around the model's operating
point.  Road-speed events enter as piecewise-constant reference offsets
on every velocity coordinate (with the spacing targets following the
time-gap policy), plus an exact re-trim of the nominal input so the new
cruise condition is an equilibrium of the linear model.  Absolute
trajectories are reconstructed by adding the operating-point offsets
before anything is written out.

Process noise is Gaussian, drawn per subsystem block from a counter-based
generator (Philox) whose stream is keyed by (seed, replication, block,
tag).  Identical keys give bitwise-identical draws, which is what makes
common-random-number comparisons and the per-block perturbation tests
exact rather than statistical.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ModelError, SimulationDivergenceError
from .platoon_model import ChainSystem
from .riccati import detectability_factor

DEFAULT_DURATION = 240.0  # s
DEFAULT_SEED = 0
DIVERGENCE_LIMIT = 1e6

#: stock scenario: -10 km/h at 45 s, back to cruise at 120 s, +10 km/h at 180 s
DEFAULT_EVENTS = (
    (45.0, 19.44 - 10.0 / 3.6),
    (120.0, 19.44),
    (180.0, 19.44 + 10.0 / 3.6),
)


@dataclass(frozen=True)
class Scenario:
    """Reference schedule and noise stream identity for one experiment."""

    duration: float = DEFAULT_DURATION
    events: tuple = DEFAULT_EVENTS
    noise_seed: int = DEFAULT_SEED
    noise_scale: object = 1.0  # scalar or per-block sequence, multiplies W

    def __post_init__(self):
        if self.duration <= 0:
            raise ModelError(f"duration must be positive, got {self.duration}")
        events = tuple((float(t), float(v)) for t, v in self.events)
        object.__setattr__(self, "events", events)
        times = [t for t, _ in events]
        if times != sorted(times):
            raise ModelError("events must be sorted by time")
        if any(t < 0 for t in times):
            raise ModelError("event times must be nonnegative")
        if any(v <= 0 for _, v in events):
            raise ModelError("event road speeds must be positive")
        if times and times[-1] > self.duration:
            raise ModelError("duration must cover all events")
        seed = int(self.noise_seed)
        if not 0 <= seed < 2**64:
            raise ModelError("noise_seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "noise_seed", seed)

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario(self.duration, self.events, seed, self.noise_scale)


def quiet_scenario(duration: float, noise_seed: int = DEFAULT_SEED, noise_scale=1.0) -> Scenario:
    """Scenario with no reference events (stationary noise rejection)."""
    return Scenario(duration=duration, events=(), noise_seed=noise_seed, noise_scale=noise_scale)


@dataclass
class SimulationTrace:
    """Time-indexed record of one closed-loop run.

    x rows are absolute states (velocities in m/s, spacings in m); u is
    the applied input (N*m, after saturation); w the drawn process noise;
    ref the active road speed; targets the deviation-coordinate reference
    offsets the controller regulated to.  Row t holds x(t), u(t), w(t)
    with x(t+1) = A x(t) + B u(t) + w(t) in deviation coordinates.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    ref: np.ndarray
    stage_cost: np.ndarray
    targets: np.ndarray
    offsets: np.ndarray
    Ts: float
    saturation_count: int
    eta: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    def deviations(self) -> np.ndarray:
        return self.x - self.offsets

    def replay_residual(self, sys: ChainSystem) -> float:
        """Max defect of the recorded run against the system dynamics."""
        xd = self.deviations()
        A, B = sys.A.data, sys.B.data
        pred = xd[:-1] @ A.T + self.u[:-1] @ B.T + self.w[:-1]
        return float(np.max(np.abs(xd[1:] - pred))) if self.steps > 1 else 0.0


def noise_factors(sys: ChainSystem):
    """Per-block factors F_i with F_i F_i' = W_i (empty for zero blocks)."""
    sp = sys.state_partition
    out = []
    for i in range(1, sp.count + 1):
        Wi = sys.W[sp.span(i), sp.span(i)]
        out.append(detectability_factor(Wi).T)
    return out


def _scale_tuple(scale, M: int):
    if np.isscalar(scale):
        vals = (float(scale),) * M
    else:
        vals = tuple(float(s) for s in scale)
        if len(vals) != M:
            raise ModelError(f"noise_scale needs {M} entries, got {len(vals)}")
    if any(s < 0 for s in vals):
        raise ModelError("noise_scale entries must be nonnegative")
    return vals


def draw_noise(sys, seed, replication, steps, tags=None, scale=1.0, factors=None):
    """Gaussian process noise (steps, n) for one replication.

    Streams are independent per block; tags shift a block's stream so a
    single block can be re-drawn while every other block stays bitwise
    identical.
    """
    sp = sys.state_partition
    M = sp.count
    if tags is None:
        tags = (0,) * M
    if len(tags) != M:
        raise ModelError(f"tags needs {M} entries, got {len(tags)}")
    scales = _scale_tuple(scale, M)
    if factors is None:
        factors = noise_factors(sys)
    w = np.zeros((steps, sp.total))
    for i in range(M):
        F = factors[i]
        if F.shape[1] == 0 or scales[i] == 0.0:
            continue
        ss = np.random.SeedSequence([int(seed), int(replication), i, int(tags[i])])
        gen = np.random.Generator(np.random.Philox(ss))
        Z = gen.standard_normal((steps, F.shape[1]))
        w[:, sp.span(i + 1)] = Z @ (np.sqrt(scales[i]) * F).T
    return w


def _plant_pieces(sys: ChainSystem):
    sp, ip = sys.state_partition, sys.input_partition
    M = sp.count
    pieces = []
    for i in range(1, M + 1):
        pieces.append(
            (
                sp.span(i),
                None if i == 1 else sp.span(i - 1),
                ip.span(i),
                sys.A.block(i, i),
                None if i == 1 else sys.A.block(i, i - 1),
                sys.B.block(i, i),
            )
        )
    return pieces


def _plant_step(pieces, x, u, w):
    """Blockwise x(t+1); keeps each block's arithmetic inside the chain."""
    xn = np.empty_like(x)
    for span, prev_span, uspan, Aii, Aprev, Bi in pieces:
        acc = x[:, span] @ Aii.T + u[:, uspan] @ Bi.T + w[:, span]
        if prev_span is not None:
            acc = acc + x[:, prev_span] @ Aprev.T
        xn[:, span] = acc
    return xn


def _reference_schedule(sys: ChainSystem, scenario: Scenario, steps: int):
    """Per-step deviation targets, input trims, and active road speeds."""
    n, m = sys.n, sys.m
    targets = np.zeros((steps, n))
    trims = np.zeros((steps, m))
    speeds = np.zeros(steps)
    layout = sys.layout
    if layout is None:
        if scenario.events:
            raise ModelError("road-speed events need a platoon layout")
        return targets, trims, speeds
    speeds[:] = layout.v0
    A, B = sys.A.data, sys.B.data
    I = np.eye(n)
    for time, speed in scenario.events:
        start = int(round(time / sys.Ts))
        if start >= steps:
            continue
        dv = speed - layout.v0
        r = np.zeros(n)
        for idx in layout.velocity_indices:
            r[idx] = dv
        for idx in layout.spacing_indices:
            r[idx] = layout.tau * speed - layout.d0
        if layout.integral_index is not None:
            r[layout.integral_index] = -dv
        rhs = (I - A) @ r
        trim, *_ = np.linalg.lstsq(B, rhs, rcond=None)
        if np.max(np.abs(B @ trim - rhs)) > 1e-8:
            raise ModelError(f"reference speed {speed} m/s is not trackable")
        targets[start:] = r
        trims[start:] = trim
        speeds[start:] = speed
    return targets, trims, speeds


def _absolute_offsets(sys: ChainSystem) -> np.ndarray:
    off = np.zeros(sys.n)
    if sys.layout is not None:
        for idx in sys.layout.velocity_indices:
            off[idx] = sys.layout.v0
        for idx in sys.layout.spacing_indices:
            off[idx] = sys.layout.d0
    return off


def run_closed_loop(
    sys: ChainSystem,
    ctrl,
    scenario: Scenario,
    replication: int = 0,
    tags=None,
    saturate: bool | None = None,
    record_controller_state: bool = False,
    noise: np.ndarray | None = None,
) -> SimulationTrace:
    """Simulate one closed-loop replication and record the full trace.

    The controller sees the regulation error (deviation state minus the
    active target) and its output is shifted by the exact input trim for
    the active reference.  Inputs are clipped to the system bounds when
    saturate is on (default: on whenever bounds exist), with each clipped
    component counted once per step.
    """
    steps = int(round(scenario.duration / sys.Ts))
    if steps < 1:
        raise ModelError("scenario shorter than one sample period")
    if noise is None:
        noise = draw_noise(
            sys, scenario.noise_seed, replication, steps, tags=tags, scale=scenario.noise_scale
        )
    elif noise.shape != (steps, sys.n):
        raise ModelError(f"noise must have shape {(steps, sys.n)}, got {noise.shape}")
    targets, trims, speeds = _reference_schedule(sys, scenario, steps)
    if saturate is None:
        saturate = sys.input_low is not None or sys.input_high is not None
    lo = sys.input_low if sys.input_low is not None else -np.inf
    hi = sys.input_high if sys.input_high is not None else np.inf
    pieces = _plant_pieces(sys)
    offsets = _absolute_offsets(sys)

    x = np.zeros((1, sys.n))
    state = ctrl.initial_state(1)
    k = 0 if state is None else state.shape[-1]
    xs = np.empty((steps, sys.n))
    us = np.empty((steps, sys.m))
    costs = np.empty(steps)
    etas = np.empty((steps, k)) if record_controller_state and k else None
    sat_count = 0
    Q, R = sys.Q, sys.R
    retarget = getattr(ctrl, "retarget", None)
    for t in range(steps):
        if (
            t > 0
            and retarget is not None
            and not np.array_equal(targets[t], targets[t - 1])
        ):
            # the broadcast reference moved: every subsystem knows the
            # error jump and shifts its conditional estimates with it
            state = retarget(state, (targets[t - 1] - targets[t])[None, :])
        err = x - targets[t]
        if etas is not None:
            etas[t] = state[0]
        u, state = ctrl.advance(state, err)
        u = u + trims[t]
        if saturate:
            clipped = np.clip(u, lo, hi)
            sat_count += int(np.count_nonzero(clipped != u))
            u = clipped
        xs[t] = x[0]
        us[t] = u[0]
        costs[t] = float(err[0] @ Q @ err[0] + u[0] @ R @ u[0])
        x = _plant_step(pieces, x, u, noise[t : t + 1])
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise SimulationDivergenceError(
                f"state left the trust region (|x| > {DIVERGENCE_LIMIT:g}) at step {t + 1}"
            )
    return SimulationTrace(
        t=np.arange(steps) * sys.Ts,
        x=xs + offsets,
        u=us,
        w=noise,
        ref=speeds,
        stage_cost=costs,
        targets=targets,
        offsets=offsets,
        Ts=sys.Ts,
        saturation_count=sat_count,
        eta=etas,
    )


def empirical_average_cost(
    sys: ChainSystem,
    ctrl,
    steps: int,
    replications: int,
    seed: int = DEFAULT_SEED,
    burn_in: float = 0.1,
    noise_scale=1.0,
):
    """Stationary per-step quadratic cost, time-and-ensemble averaged.

    Runs the unclipped linear loop (no events, no saturation) for the
    requested number of steps per replication, discards the leading
    burn-in fraction, and averages x'Qx + u'Ru over the rest.  Returns
    (mean, standard error) with the standard error taken across
    replication means, which are independent by construction.
    """
    if steps < 10:
        raise ModelError("too few steps for a stationary average")
    if replications < 2:
        raise ModelError("need at least 2 replications for a standard error")
    factors = noise_factors(sys)
    sp = sys.state_partition
    skip = int(round(burn_in * steps))
    pieces = _plant_pieces(sys)
    Q, R = sys.Q, sys.R
    Rn = replications
    noise = np.empty((Rn, steps, sys.n))
    for r in range(Rn):
        noise[r] = draw_noise(sys, seed, r, steps, scale=noise_scale, factors=factors)
    x = np.zeros((Rn, sys.n))
    state = ctrl.initial_state(Rn)
    sums = np.zeros(Rn)
    kept = 0
    for t in range(steps):
        u, state = ctrl.advance(state, x)
        if t >= skip:
            sums += ((x @ Q) * x).sum(axis=1) + ((u @ R) * u).sum(axis=1)
            kept += 1
        x = _plant_step(pieces, x, u, noise[:, t])
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise SimulationDivergenceError(f"ensemble diverged at step {t + 1}")
    rep_means = sums / kept
    mean = float(rep_means.mean())
    se = float(rep_means.std(ddof=1) / np.sqrt(Rn))
    return mean, se


def covariance_trace_series(sys: ChainSystem, ctrl, steps: int) -> np.ndarray:
    """Trace of the exact closed-loop state covariance after each step.

    Propagates S(t+1) = Acl S(t) Acl' + G W G' for the joint plant plus
    controller state from S(0) = 0 and returns the trace of the plant
    part, length steps + 1.
    """
    from .synthesis import closed_loop_maps

    Acl, G = closed_loop_maps(sys, ctrl)
    n = sys.n
    S = np.zeros_like(Acl)
    Wfull = G @ sys.W @ G.T
    out = np.empty(steps + 1)
    out[0] = 0.0
    for t in range(steps):
        S = Acl @ S @ Acl.T + Wfull
        S = (S + S.T) / 2
        out[t + 1] = np.trace(S[:n, :n])
    return out


@dataclass
class MetricsReport:
    """Per-controller, per-vehicle metrics aggregated over replications.

    energy holds the replication-mean of the run 2-norm of each input
    channel; u_max/u_min are the extremes over all replications; the
    per-step cost averages the stage cost over time and replications.
    Relative differences are computed on demand against any label.
    """

    labels: tuple
    vehicles: int
    replications: int
    energy: dict
    u_max: dict
    u_min: dict
    mean_velocity: dict
    per_step_cost: dict
    saturation: dict
    baseline: str

    def energy_reduction_pct(self, against: str, label: str) -> np.ndarray:
        """Per-vehicle % by which `label` undercuts `against` in energy."""
        base = self.energy[against]
        return 100.0 * (base - self.energy[label]) / base

    def cost_difference_pct(self, against: str, label: str) -> float:
        base = self.per_step_cost[against]
        return 100.0 * (self.per_step_cost[label] - base) / base


def compare_controllers(
    sys: ChainSystem,
    scenario: Scenario,
    controllers,
    replications: int = 1,
    baseline: str | None = None,
    saturate: bool | None = None,
) -> MetricsReport:
    """Run labeled controllers on common noise and aggregate metrics.

    controllers is a list of (label, controller).  Every arm of every
    replication consumes the identical noise array (common random
    numbers), so metric differences are driven by the controllers alone.
    """
    items = list(controllers)
    if not items:
        raise ModelError("need at least one controller to compare")
    if replications < 1:
        raise ModelError("need at least one replication")
    labels = tuple(label for label, _ in items)
    if len(set(labels)) != len(labels):
        raise ModelError("controller labels must be unique")
    if baseline is None:
        baseline = labels[0]
    if baseline not in labels:
        raise ModelError(f"baseline {baseline!r} is not among the labels")
    steps = int(round(scenario.duration / sys.Ts))
    factors = noise_factors(sys)
    ip = sys.input_partition
    M = ip.count
    vel = sys.layout.velocity_indices if sys.layout is not None else None

    energy = {lb: np.zeros(M) for lb in labels}
    u_max = {lb: np.full(M, -np.inf) for lb in labels}
    u_min = {lb: np.full(M, np.inf) for lb in labels}
    meanv = {lb: np.zeros(M) for lb in labels}
    cost = {lb: 0.0 for lb in labels}
    sat = {lb: 0 for lb in labels}
    for rep in range(replications):
        noise = draw_noise(
            sys, scenario.noise_seed, rep, steps, scale=scenario.noise_scale, factors=factors
        )
        for label, ctrl in items:
            trace = run_closed_loop(
                sys, ctrl, scenario, replication=rep, saturate=saturate, noise=noise
            )
            for i in range(M):
                ui = trace.u[:, ip.span(i + 1)]
                energy[label][i] += np.sqrt(np.sum(ui**2))
                u_max[label][i] = max(u_max[label][i], float(ui.max()))
                u_min[label][i] = min(u_min[label][i], float(ui.min()))
                if vel is not None:
                    meanv[label][i] += float(trace.x[:, vel[i]].mean())
            cost[label] += float(trace.stage_cost.mean())
            sat[label] += trace.saturation_count
    for lb in labels:
        energy[lb] /= replications
        meanv[lb] /= replications
        cost[lb] /= replications
    return MetricsReport(
        labels=labels,
        vehicles=M,
        replications=replications,
        energy=energy,
        u_max=u_max,
        u_min=u_min,
        mean_velocity=meanv,
        per_step_cost=cost,
        saturation=sat,
        baseline=baseline,
    )


def state_column_names(sys: ChainSystem):
    """CSV column names for the state vector (v1, d12, v2, ... by layout)."""
    if sys.layout is None:
        return [f"x{i + 1}" for i in range(sys.n)]
    names = [""] * sys.n
    for veh, idx in enumerate(sys.layout.velocity_indices):
        names[idx] = f"v{veh + 1}"
    for gap, idx in enumerate(sys.layout.spacing_indices):
        names[idx] = f"d{gap + 1}{gap + 2}"
    if sys.layout.integral_index is not None:
        names[sys.layout.integral_index] = "aux1"
    return names


def write_trace_csv(trace: SimulationTrace, sys: ChainSystem, path):
    """Trace CSV: t, ref_speed, states, inputs, stage_cost (floats exact)."""
    cols = ["t", "ref_speed", *state_column_names(sys)]
    cols += [f"u{i + 1}" for i in range(sys.m)]
    cols.append("stage_cost")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for t in range(trace.steps):
            row = [trace.t[t], trace.ref[t], *trace.x[t], *trace.u[t], trace.stage_cost[t]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_metrics_csv(report: MetricsReport, path):
    """Metrics CSV: one row per (controller, vehicle) plus diff columns."""
    base = report.baseline
    header = (
        "controller,vehicle,energy_Nm,u_max_Nm,u_min_Nm,mean_velocity_mps,"
        f"per_step_cost,saturation_count,energy_reduction_vs_{base}_pct,"
        f"cost_diff_vs_{base}_pct"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for lb in report.labels:
            red = report.energy_reduction_pct(base, lb)
            cdiff = report.cost_difference_pct(base, lb)
            for i in range(report.vehicles):
                row = [
                    lb,
                    str(i + 1),
                    repr(float(report.energy[lb][i])),
                    repr(float(report.u_max[lb][i])),
                    repr(float(report.u_min[lb][i])),
                    repr(float(report.mean_velocity[lb][i])),
                    repr(float(report.per_step_cost[lb])),
                    str(report.saturation[lb]),
                    repr(float(red[i])),
                    repr(float(cdiff)),
                ]
                fh.write(",".join(row) + "\n")


def format_metrics_table(report: MetricsReport) -> str:
    """Human-readable comparison table (one block per controller)."""
    lines = []
    base = report.baseline
    for lb in report.labels:
        lines.append(f"controller {lb} (per-step cost {report.per_step_cost[lb]:.6g}, "
                     f"saturation count {report.saturation[lb]})")
        red = report.energy_reduction_pct(base, lb)
        for i in range(report.vehicles):
            lines.append(
                f"  vehicle {i + 1}: energy {report.energy[lb][i]:.6g} N*m, "
                f"u in [{report.u_min[lb][i]:.6g}, {report.u_max[lb][i]:.6g}] N*m, "
                f"mean velocity {report.mean_velocity[lb][i]:.4f} m/s, "
                f"energy reduction vs {base}: {red[i]:+.2f} %"
            )
    return "\n".join(lines)
