"""Closed-loop simulation: torque-level plant, obstacle estimation, discrepancy.

The plant integrates the full-order dynamics qdd = M^-1 (tau - h) of a
*separately scaled* model (mass mismatch injected only on the plant side;
the controller keeps the nominal model), while the control loop runs the
whole pipeline at the control rate:

    prioritized IK -> constraint collection -> velocity safety filter
    -> reference acceleration -> torque QP -> motor command -> physics substeps

The per-cycle discrepancy between the commanded and realized joint velocity,

    d_k = (q_{k+1} - q_k) / dt_control - qd_safe_k,

is the disturbance against which the velocity filter's robustness margin is
sized; its running max-norm dbar feeds the degradation-bound checks.
Obstacle positions are measured with seeded Gaussian noise and tracked by a
constant-velocity Kalman filter, whose velocity estimate supplies the
object-row drift term.  Runs are bitwise deterministic for a fixed seed.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._fastdyn import joint_dynamics
from .dynwbc import DynWbcWeights, motor_torque, safe_acceleration, solve_dynwbc
from .geometry import CollisionBody, closest_points, pose_body, workspace_barrier
from .kinwbc import prioritized_ik
from .model import JointState, RobotModel, bias_forces, forward_kinematics
from .qpsolver import QpSolver
from .safety import (
    BarrierKind,
    FilterConfig,
    FilterMode,
    Obstacle,
    WorkspacePair,
    collect_constraints,
    ecbf_rows,
    filter_velocity,
)

log = logging.getLogger(__name__)


class Integrator(enum.Enum):
    SEMI_IMPLICIT_EULER = "semi-implicit-euler"
    RK4 = "rk4"


class SimulationDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TorquePulse:
    """Square external-torque pulse applied to the plant (disturbance input)."""

    start: float
    end: float
    torque: np.ndarray

    def at(self, t: float, n: int) -> np.ndarray:
        if self.start <= t < self.end:
            return self.torque
        return np.zeros(n)


@dataclass(frozen=True)
class SimConfig:
    duration: float
    dt_control: float = 5e-4
    dt_physics: float = 1e-4
    mass_scale: float = 1.0
    integrator: Integrator = Integrator.SEMI_IMPLICIT_EULER
    seed: int = 0
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    external_torque: tuple[TorquePulse, ...] = ()
    pipelined: bool = False

    def __post_init__(self) -> None:
        if self.dt_physics > self.dt_control + 1e-15:
            raise ValueError("dt_physics must be <= dt_control")
        if self.mass_scale <= 0.0:
            raise ValueError("mass_scale must be > 0")

    @property
    def substeps(self) -> int:
        return max(1, round(self.dt_control / self.dt_physics))


def _accel(model: RobotModel, q: np.ndarray, qd: np.ndarray, tau: np.ndarray,
           gravity: np.ndarray) -> np.ndarray:
    mass, bias = joint_dynamics(model, q, qd, gravity)
    return np.linalg.solve(mass, tau - bias)


def step_physics(
    plant_model: RobotModel,
    state: JointState,
    tau_cmd: np.ndarray,
    gravity: np.ndarray,
    dt: float,
    integrator: Integrator = Integrator.SEMI_IMPLICIT_EULER,
) -> JointState:
    """Advance the plant one physics step under a held torque command."""
    q, qd = state.q, state.qd
    if integrator is Integrator.SEMI_IMPLICIT_EULER:
        qdd = _accel(plant_model, q, qd, tau_cmd, gravity)
        qd_next = qd + qdd * dt
        q_next = q + qd_next * dt
    else:
        def f(qq, vv):
            return vv, _accel(plant_model, qq, vv, tau_cmd, gravity)

        k1q, k1v = f(q, qd)
        k2q, k2v = f(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v)
        k3q, k3v = f(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v)
        k4q, k4v = f(q + dt * k3q, qd + dt * k3v)
        q_next = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd_next = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(qd_next))):
        raise SimulationDivergedError(
            f"non-finite state at t={state.t + dt:.6f}: q={q_next}, qd={qd_next}"
        )
    return JointState(q=q_next, qd=qd_next, t=state.t + dt)


@dataclass(frozen=True)
class ObstacleEstimate:
    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray


class ConstantVelocityKalman:
    """Linear Kalman filter on [position; velocity] with a constant-velocity model."""

    def __init__(self, meas_std: float, process_noise: float = 1e-2):
        self.r = max(meas_std, 1e-6) ** 2
        self.q = process_noise
        self.x: np.ndarray | None = None
        self.P = np.zeros((6, 6))

    def update(self, measurement: np.ndarray, dt: float) -> ObstacleEstimate:
        z = np.asarray(measurement, dtype=float)
        eye3 = np.eye(3)
        if self.x is None:
            self.x = np.concatenate([z, np.zeros(3)])
            self.P = np.block([
                [self.r * eye3, np.zeros((3, 3))],
                [np.zeros((3, 3)), 1.0 * eye3],
            ])
        else:
            F = np.block([[eye3, dt * eye3], [np.zeros((3, 3)), eye3]])
            Q = self.q * np.block([
                [dt ** 3 / 3.0 * eye3, dt ** 2 / 2.0 * eye3],
                [dt ** 2 / 2.0 * eye3, dt * eye3],
            ])
            self.x = F @ self.x
            self.P = F @ self.P @ F.T + Q
            S = self.P[:3, :3] + self.r * eye3
            K = np.linalg.solve(S.T, self.P[:, :3].T).T
            self.x = self.x + K @ (z - self.x[:3])
            self.P = self.P - K @ self.P[:3, :]
        return ObstacleEstimate(
            position=self.x[:3].copy(),
            velocity=self.x[3:].copy(),
            covariance=self.P.copy(),
        )


@dataclass
class DiscrepancyTrace:
    """Per-cycle velocity-tracking discrepancy and its running max-norm bound."""

    d: list[np.ndarray] = field(default_factory=list)
    dbar: float = 0.0

    def record(self, d_k: np.ndarray) -> float:
        self.d.append(d_k)
        self.dbar = max(self.dbar, float(np.max(np.abs(d_k))))
        return self.dbar


@dataclass
class ConstraintDumpRow:
    t: float
    kind: str
    pair: str
    h: float
    rhs: float
    active: bool


@dataclass
class RunTrace:
    """Per-cycle record of a closed-loop run plus derived metrics."""

    n_dof: int
    barrier_keys: list[str]
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdot_des: np.ndarray
    qdot_safe: np.ndarray
    tau_cmd: np.ndarray
    h: np.ndarray                       # (cycles, len(barrier_keys))
    d_inf: np.ndarray
    dbar: np.ndarray
    qp_iters: np.ndarray
    qp_status: list[str]
    dynamics_residual: np.ndarray
    h_e_min: np.ndarray                 # min over eCBF rows, nan outside ecbf mode
    relaxed: np.ndarray
    clamped: np.ndarray                 # (cycles, n_dof) per-joint clamp flags
    runtime_per_cycle_us: float = 0.0
    constraint_dump: list[ConstraintDumpRow] = field(default_factory=list)

    @property
    def cycles(self) -> int:
        return self.t.shape[0]

    def final_dbar(self) -> float:
        return float(self.dbar[-1]) if self.cycles else 0.0

    def column_names(self) -> list[str]:
        names = ["t"]
        for block in ("q", "qd", "qdot_des", "qdot_safe", "tau_cmd"):
            names += [f"{block}{i}" for i in range(self.n_dof)]
        names += [f"h:{key}" for key in self.barrier_keys]
        names += ["d_inf", "dbar", "qp_iters", "qp_status"]
        return names

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.column_names()) + "\n")
            for k in range(self.cycles):
                cells = [repr(float(self.t[k]))]
                for block in (self.q, self.qd, self.qdot_des, self.qdot_safe, self.tau_cmd):
                    cells += [repr(float(v)) for v in block[k]]
                cells += [repr(float(v)) for v in self.h[k]]
                cells += [
                    repr(float(self.d_inf[k])),
                    repr(float(self.dbar[k])),
                    str(int(self.qp_iters[k])),
                    self.qp_status[k],
                ]
                fh.write(",".join(cells) + "\n")

    def to_torque_csv(self, path) -> None:
        """Torque command trace: t, per-joint command, per-joint clamp flag."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            header = (["t"] + [f"tau_cmd{i}" for i in range(self.n_dof)]
                      + [f"clamped{i}" for i in range(self.n_dof)])
            fh.write(",".join(header) + "\n")
            for k in range(self.cycles):
                cells = [repr(float(self.t[k]))]
                cells += [repr(float(v)) for v in self.tau_cmd[k]]
                cells += [str(int(v)) for v in self.clamped[k]]
                fh.write(",".join(cells) + "\n")

    def dump_constraints_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,kind,pair,h,rhs,active\n")
            for row in self.constraint_dump:
                fh.write(
                    f"{row.t!r},{row.kind},{row.pair},{row.h!r},{row.rhs!r},{int(row.active)}\n"
                )

    def min_h(self, keys: list[str] | None = None) -> float:
        if not self.cycles:
            return math.inf
        if keys is None:
            return float(self.h.min()) if self.h.size else math.inf
        idx = [self.barrier_keys.index(k) for k in keys]
        return float(self.h[:, idx].min()) if idx else math.inf


class _ObstacleTruth:
    """Ground-truth constant-velocity motion of one world collision body."""

    def __init__(self, body: CollisionBody, velocity: np.ndarray, meas_std: float,
                 process_noise: float):
        self.body = body
        self.velocity = np.asarray(velocity, dtype=float)
        self.meas_std = meas_std
        self.kalman = ConstantVelocityKalman(meas_std, process_noise)

    def at(self, t: float) -> CollisionBody:
        shift = self.velocity * t
        return replace(self.body, p0=self.body.p0 + shift, p1=self.body.p1 + shift,
                       velocity=self.velocity)

    def estimate(self, t: float, dt: float, rng: np.random.Generator) -> Obstacle:
        truth = self.at(t)
        noise = rng.normal(0.0, self.meas_std, 3) if self.meas_std > 0 else np.zeros(3)
        est = self.kalman.update(truth.p0 + noise, dt)
        offset = est.position - self.body.p0
        body = replace(self.body, p0=self.body.p0 + offset, p1=self.body.p1 + offset,
                       velocity=est.velocity)
        return Obstacle(body=body, velocity=est.velocity)


def _barrier_catalog(scenario) -> list[tuple[str, str]]:
    """Stable (kind, pair) keys recorded at every cycle."""
    keys: list[tuple[str, str]] = []
    n = scenario.robot.n_dof
    for i in range(n):
        keys.append((BarrierKind.JOINT_LIMIT_MIN.value, f"q{i}"))
        keys.append((BarrierKind.JOINT_LIMIT_MAX.value, f"q{i}"))
    for a, b in scenario.collision_pairs:
        keys.append((BarrierKind.SELF_COLLISION.value, f"{a.name}|{b.name}"))
    for spec in scenario.obstacles:
        for body in scenario.robot.collision_bodies:
            keys.append((BarrierKind.OBJECT_COLLISION.value, f"{body.name}|{spec.body.name}"))
    for pair in scenario.workspace_pairs:
        keys.append((BarrierKind.WORKSPACE.value, pair.name))
    return keys


def _truth_barriers(model, q, fk, scenario, obstacle_truths, t) -> np.ndarray:
    """Ground-truth barrier values for the trace (estimates are controller-side)."""
    vals: list[float] = []
    for i, joint in enumerate(model.joints):
        vals.append(float(q[i] - joint.q_min))
        vals.append(float(joint.q_max - q[i]))
    for a, b in scenario.collision_pairs:
        prox = closest_points(pose_body(a, fk), pose_body(b, fk))
        vals.append(prox.h)
    for truth in obstacle_truths:
        obs_body = truth.at(t)
        for body in model.collision_bodies:
            prox = closest_points(pose_body(body, fk), pose_body(obs_body, fk))
            vals.append(prox.h)
    for pair in scenario.workspace_pairs:
        h, _ = workspace_barrier(
            model, q, (pair.link_a, pair.point_a), (pair.link_b, pair.point_b),
            pair.d_max, fk=fk,
        )
        vals.append(h)
    return np.array(vals)


def run_closed_loop(
    nominal_model: RobotModel,
    plant_model: RobotModel,
    scenario,
    mode: FilterMode | None = None,
    trace_constraints: bool = False,
    ideal_acceleration: bool = False,
) -> RunTrace:
    """Run the full control pipeline against the (possibly mismatched) plant.

    ``scenario`` provides tasks, obstacles, collision pairs, filter and
    controller configuration (see scenario.Scenario).  ``ideal_acceleration``
    is a diagnostic mode that integrates qdd := qdd_safe directly, bypassing
    the torque controller, to expose the discretization-only discrepancy.
    """
    cfg: SimConfig = scenario.sim
    filter_config: FilterConfig = scenario.filter_config
    if mode is not None:
        filter_config = filter_config.with_mode(mode)
    weights: DynWbcWeights = scenario.weights
    gravity = cfg.gravity
    n = nominal_model.n_dof
    rng = np.random.default_rng(cfg.seed)

    obstacle_truths = [
        _ObstacleTruth(spec.body, spec.velocity, spec.measurement_noise_std,
                       spec.process_noise)
        for spec in scenario.obstacles
    ]
    catalog = _barrier_catalog(scenario)
    barrier_keys = [f"{kind}|{pair}" for kind, pair in catalog]

    cycles = int(round(cfg.duration / cfg.dt_control))
    state = JointState(q=scenario.q0.copy(), qd=scenario.qd0.copy(), t=0.0)
    tau_prev = bias_forces(nominal_model, state.q, np.zeros(n), gravity)
    filter_solver = QpSolver()
    dyn_solver = QpSolver()
    filter_warm: np.ndarray | None = None
    dyn_warm: np.ndarray | None = None
    qdd_safe_pipeline = np.zeros(n)

    cols = {
        "t": np.zeros(cycles),
        "q": np.zeros((cycles, n)),
        "qd": np.zeros((cycles, n)),
        "qdot_des": np.zeros((cycles, n)),
        "qdot_safe": np.zeros((cycles, n)),
        "tau_cmd": np.zeros((cycles, n)),
        "h": np.zeros((cycles, len(barrier_keys))),
        "d_inf": np.zeros(cycles),
        "dbar": np.zeros(cycles),
        "qp_iters": np.zeros(cycles, dtype=int),
        "residual": np.zeros(cycles),
        "h_e_min": np.full(cycles, np.nan),
        "relaxed": np.zeros(cycles, dtype=bool),
        "clamped": np.zeros((cycles, n), dtype=bool),
    }
    statuses: list[str] = []
    dump: list[ConstraintDumpRow] = []
    discrepancy = DiscrepancyTrace()

    wall_start = time.perf_counter()
    for k in range(cycles):
        t = k * cfg.dt_control
        fk = forward_kinematics(nominal_model, state.q)

        obstacles = [
            truth.estimate(t, cfg.dt_control, rng) for truth in obstacle_truths
        ]

        tasks = [spec.task_at(t) for spec in scenario.tasks]
        if tasks:
            qdot_des, _ = prioritized_ik(nominal_model, state, tasks, cfg.dt_control, fk=fk)
        else:
            qdot_des = np.zeros(n)

        rows = collect_constraints(
            nominal_model, state, obstacles, filter_config,
            scenario.collision_pairs, scenario.workspace_pairs, fk=fk,
        )
        result = filter_velocity(qdot_des, rows, filter_config, filter_solver,
                                 warm_start=filter_warm)
        qdot_safe = result.qdot_safe
        filter_warm = qdot_safe

        q_safe = state.q + qdot_safe * cfg.dt_control
        qdd_safe = safe_acceleration(q_safe, qdot_safe, state, weights)
        if cfg.pipelined:
            qdd_safe_used = qdd_safe_pipeline
            qdd_safe_pipeline = qdd_safe
        else:
            qdd_safe_used = qdd_safe

        extra_rows = []
        if filter_config.mode is FilterMode.ECBF:
            extra_rows = ecbf_rows(
                nominal_model, state, obstacles, filter_config,
                scenario.collision_pairs, scenario.workspace_pairs,
            )
            cols["h_e_min"][k] = min((r.h_e for r in extra_rows), default=np.nan)

        if ideal_acceleration:
            tau_cmd = np.zeros(n)
            clamp = np.zeros(n, dtype=bool)
            cols["residual"][k] = 0.0
        else:
            dyn = solve_dynwbc(
                nominal_model, state, qdd_safe_used, None, extra_rows, weights,
                tau_prev, dyn_solver, gravity, warm_start=dyn_warm,
            )
            dyn_warm = dyn.solution.x
            tau_prev = dyn.tau_opt
            cols["residual"][k] = dyn.dynamics_residual
            tau_cmd, clamp = motor_torque(
                dyn.tau_opt, q_safe, qdot_safe, state, weights,
                tau_max=nominal_model.tau_max,
            )

        cols["t"][k] = t
        cols["q"][k] = state.q
        cols["qd"][k] = state.qd
        cols["qdot_des"][k] = qdot_des
        cols["qdot_safe"][k] = qdot_safe
        cols["tau_cmd"][k] = tau_cmd
        cols["h"][k] = _truth_barriers(nominal_model, state.q, fk, scenario,
                                       obstacle_truths, t)
        cols["qp_iters"][k] = result.iterations
        cols["relaxed"][k] = result.relaxed
        cols["clamped"][k] = clamp
        statuses.append(result.status)

        if trace_constraints:
            tol = 1e-8 * (1.0 + float(np.max(np.abs(qdot_safe), initial=0.0)))
            plain = filter_config.mode is FilterMode.CBF
            for c in rows:
                rhs = c.rhs(plain_cbf=plain)
                dump.append(ConstraintDumpRow(
                    t=t, kind=c.kind.value, pair=c.pair, h=c.h, rhs=rhs,
                    active=bool(c.grad @ qdot_safe - rhs <= tol),
                ))

        q_before = state.q
        for _ in range(cfg.substeps):
            tau_ext = sum(
                (p.at(state.t, n) for p in cfg.external_torque), np.zeros(n)
            )
            if ideal_acceleration:
                qd_next = state.qd + qdd_safe_used * cfg.dt_physics
                q_next = state.q + qd_next * cfg.dt_physics
                state = JointState(q=q_next, qd=qd_next, t=state.t + cfg.dt_physics)
            else:
                state = step_physics(
                    plant_model, state, tau_cmd + tau_ext, gravity,
                    cfg.dt_physics, cfg.integrator,
                )

        d_k = (state.q - q_before) / cfg.dt_control - qdot_safe
        cols["d_inf"][k] = float(np.max(np.abs(d_k), initial=0.0))
        cols["dbar"][k] = discrepancy.record(d_k)

    runtime_us = (
        (time.perf_counter() - wall_start) / cycles * 1e6 if cycles else 0.0
    )
    return RunTrace(
        n_dof=n,
        barrier_keys=barrier_keys,
        t=cols["t"],
        q=cols["q"],
        qd=cols["qd"],
        qdot_des=cols["qdot_des"],
        qdot_safe=cols["qdot_safe"],
        tau_cmd=cols["tau_cmd"],
        h=cols["h"],
        d_inf=cols["d_inf"],
        dbar=cols["dbar"],
        qp_iters=cols["qp_iters"],
        qp_status=statuses,
        dynamics_residual=cols["residual"],
        h_e_min=cols["h_e_min"],
        relaxed=cols["relaxed"],
        clamped=cols["clamped"],
        runtime_per_cycle_us=runtime_us,
        constraint_dump=dump,
    )
