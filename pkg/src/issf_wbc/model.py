"""Fixed-base serial-chain robot model: kinematics and rigid-body dynamics.

Conventions
-----------
Joint i is revolute, located at the origin of the parent frame (the world
frame for i = 0), with its axis expressed in the parent frame.  The link
frame sits at the distal end of the link:

    T_i = T_{i-1} @ Rot(axis_i, q_i) @ Xfix_i

where Xfix_i is the link's fixed transform (where the next joint sits).
With unit x offsets, a 2-link chain at q = 0 therefore ends at (2, 0, 0).

Mass matrix uses a composite-rigid-body accumulation, bias forces a
recursive Newton-Euler pass; both operate on world-frame quantities.
All functions are pure (no caching, thread-safe).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .geometry import CollisionBody

ROBOT_FORMAT = "issf-wbc/robot/v1"


class ModelError(ValueError):
    """Invalid robot description or state."""


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross has ~30x call overhead for single 3-vectors; this path is hot.
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    v = 1.0 - c
    return np.array(
        [
            [x * x * v + c, x * y * v - z * s, x * z * v + y * s],
            [x * y * v + z * s, y * y * v + c, y * z * v - x * s],
            [x * z * v - y * s, y * z * v + x * s, z * z * v + c],
        ]
    )


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class LinkSpec:
    """One link: inertial data plus the fixed transform placing its frame."""

    mass: float
    com: np.ndarray                 # CoM in link frame [m]
    inertia: np.ndarray             # 3x3 about CoM, link frame [kg m^2]
    parent: int                     # index of parent link, -1 = fixed base
    origin_xyz: np.ndarray          # fixed offset applied after the joint
    origin_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @cached_property
    def origin_rotation(self) -> np.ndarray:
        return rpy_matrix(*self.origin_rpy)


@dataclass(frozen=True)
class JointSpec:
    """Revolute joint: unit axis in the parent frame plus limits."""

    axis: np.ndarray
    q_min: float = -math.pi
    q_max: float = math.pi
    qd_max: float = math.inf
    tau_max: float = math.inf


@dataclass(frozen=True)
class JointState:
    """Configuration and velocity at time t (the reduced state y is q)."""

    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    def validate(self, n_dof: int) -> None:
        if self.q.shape != (n_dof,) or self.qd.shape != (n_dof,):
            raise ModelError(
                f"state dimension mismatch: q {self.q.shape}, qd {self.qd.shape}, "
                f"expected ({n_dof},)"
            )
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ModelError("non-finite entries in joint state")


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Fixed-base serial chain of revolute joints."""

    name: str
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    collision_bodies: tuple["CollisionBody", ...] = ()

    def __post_init__(self) -> None:
        if len(self.links) != len(self.joints):
            raise ModelError("links and joints must pair up one-to-one")
        for i, link in enumerate(self.links):
            if link.parent != i - 1:
                raise ModelError(
                    f"link {i}: parent {link.parent} breaks the single serial chain"
                )
            if link.mass <= 0.0:
                raise ModelError(f"link {i}: mass must be > 0")
            inertia = np.asarray(link.inertia)
            if not np.allclose(inertia, inertia.T, atol=1e-12):
                raise ModelError(f"link {i}: inertia not symmetric")
            if np.min(np.linalg.eigvalsh(inertia)) <= 0.0:
                raise ModelError(f"link {i}: inertia not positive definite")
        for i, joint in enumerate(self.joints):
            if joint.q_min >= joint.q_max:
                raise ModelError(f"joint {i}: q_min must be < q_max")
            if not math.isclose(float(np.linalg.norm(joint.axis)), 1.0, abs_tol=1e-9):
                raise ModelError(f"joint {i}: axis must be a unit vector")

    @property
    def n_dof(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @property
    def tau_max(self) -> np.ndarray:
        return np.array([j.tau_max for j in self.joints])

    def collision_body(self, name: str) -> "CollisionBody":
        for body in self.collision_bodies:
            if body.name == name:
                return body
        raise ModelError(f"unknown collision body {name!r}")

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_dof,):
            raise ModelError(f"q has shape {q.shape}, expected ({self.n_dof},)")
        return q


@dataclass(frozen=True)
class FkResult:
    """World-frame link frames plus joint axes/origins (reused by Jacobians)."""

    rot: np.ndarray           # (n, 3, 3) link orientations
    pos: np.ndarray           # (n, 3) link origins
    joint_axis: np.ndarray    # (n, 3) world joint axes
    joint_origin: np.ndarray  # (n, 3) world joint positions

    def link_point(self, link: int, point_in_link: np.ndarray) -> np.ndarray:
        return self.pos[link] + self.rot[link] @ np.asarray(point_in_link, dtype=float)


def forward_kinematics(model: RobotModel, q: np.ndarray) -> FkResult:
    """Compose world-frame link poses parent-to-child (base is the identity)."""
    q = model.check_q(q)
    n = model.n_dof
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    r_parent = np.eye(3)
    p_parent = np.zeros(3)
    for i in range(n):
        axis_w = r_parent @ model.joints[i].axis
        axes[i] = axis_w
        origins[i] = p_parent
        r_joint = r_parent @ rotation_about_axis(model.joints[i].axis, float(q[i]))
        link = model.links[i]
        rot[i] = r_joint @ link.origin_rotation
        pos[i] = p_parent + r_joint @ link.origin_xyz
        r_parent, p_parent = rot[i], pos[i]
    return FkResult(rot=rot, pos=pos, joint_axis=axes, joint_origin=origins)


def point_jacobian(
    model: RobotModel,
    q: np.ndarray,
    link_index: int,
    point_in_link: np.ndarray,
    fk: FkResult | None = None,
) -> np.ndarray:
    """3 x n_dof positional Jacobian of a point rigidly attached to a link.

    Column j is axis_j x (p - o_j) for joints on the path (j <= link_index),
    zero otherwise.
    """
    if not 0 <= link_index < model.n_dof:
        raise ModelError(f"link index {link_index} out of range")
    if fk is None:
        fk = forward_kinematics(model, q)
    p = fk.link_point(link_index, point_in_link)
    jac = np.zeros((3, model.n_dof))
    k = link_index + 1
    jac[:, :k] = np.cross(fk.joint_axis[:k], p[None, :] - fk.joint_origin[:k]).T
    return jac


def _world_inertials(model: RobotModel, fk: FkResult):
    """Per-link world CoM positions and world-frame inertia about CoM."""
    n = model.n_dof
    coms = np.empty((n, 3))
    inertias = np.empty((n, 3, 3))
    for i in range(n):
        link = model.links[i]
        coms[i] = fk.link_point(i, link.com)
        inertias[i] = fk.rot[i] @ link.inertia @ fk.rot[i].T
    return coms, inertias


def _shift_inertia(inertia: np.ndarray, mass: float, d: np.ndarray) -> np.ndarray:
    """Parallel-axis shift of an inertia from the CoM to CoM + d."""
    return inertia + mass * (float(d @ d) * np.eye(3) - np.outer(d, d))


def mass_matrix(model: RobotModel, q: np.ndarray, fk: FkResult | None = None) -> np.ndarray:
    """Generalized inertia matrix via composite-rigid-body accumulation."""
    q = model.check_q(q)
    if fk is None:
        fk = forward_kinematics(model, q)
    n = model.n_dof
    coms, inertias = _world_inertials(model, fk)

    # Composite body i..n-1: mass, CoM, inertia about composite CoM.
    comp_m = np.empty(n)
    comp_c = np.empty((n, 3))
    comp_i = np.empty((n, 3, 3))
    m_acc = 0.0
    c_acc = np.zeros(3)
    i_acc = np.zeros((3, 3))
    for i in range(n - 1, -1, -1):
        m_new = m_acc + model.links[i].mass
        c_new = (model.links[i].mass * coms[i] + m_acc * c_acc) / m_new
        i_new = _shift_inertia(inertias[i], model.links[i].mass, coms[i] - c_new)
        if m_acc > 0.0:
            i_new = i_new + _shift_inertia(i_acc, m_acc, c_acc - c_new)
        comp_m[i], comp_c[i], comp_i[i] = m_new, c_new, i_new
        m_acc, c_acc, i_acc = m_new, c_new, i_new

    mat = np.zeros((n, n))
    for j in range(n):
        z = fk.joint_axis[j]
        r = comp_c[j] - fk.joint_origin[j]
        force = comp_m[j] * _cross(z, r)
        torque = comp_i[j] @ z + _cross(r, force)
        for i in range(j + 1):
            arm = fk.joint_origin[j] - fk.joint_origin[i]
            mij = fk.joint_axis[i] @ (torque + _cross(arm, force))
            mat[i, j] = mij
            mat[j, i] = mij
    return mat


def bias_forces(
    model: RobotModel,
    q: np.ndarray,
    qd: np.ndarray,
    gravity: np.ndarray,
    fk: FkResult | None = None,
) -> np.ndarray:
    """Coriolis, centrifugal and gravity torques h(q, qd) (Newton-Euler, qdd = 0).

    Gravity enters through the standard base-acceleration trick a_0 = -g.
    """
    q = model.check_q(q)
    qd = np.asarray(qd, dtype=float)
    if qd.shape != (model.n_dof,):
        raise ModelError(f"qd has shape {qd.shape}, expected ({model.n_dof},)")
    if fk is None:
        fk = forward_kinematics(model, q)
    n = model.n_dof
    coms, inertias = _world_inertials(model, fk)

    omega = np.zeros(3)
    alpha = np.zeros(3)
    a_origin = -np.asarray(gravity, dtype=float)
    acc_com = np.empty((n, 3))
    omegas = np.empty((n, 3))
    alphas = np.empty((n, 3))
    for i in range(n):
        z = fk.joint_axis[i]
        zqd = z * qd[i]
        alpha = alpha + _cross(omega, zqd)
        omega = omega + zqd
        r_com = coms[i] - fk.joint_origin[i]
        acc_com[i] = a_origin + _cross(alpha, r_com) + _cross(omega, _cross(omega, r_com))
        r_frame = fk.pos[i] - fk.joint_origin[i]
        a_origin = a_origin + _cross(alpha, r_frame) + _cross(omega, _cross(omega, r_frame))
        omegas[i], alphas[i] = omega, alpha

    h = np.zeros(n)
    f_child = np.zeros(3)
    n_child = np.zeros(3)
    for i in range(n - 1, -1, -1):
        f_inertial = model.links[i].mass * acc_com[i]
        torque = (
            inertias[i] @ alphas[i]
            + _cross(omegas[i], inertias[i] @ omegas[i])
            + _cross(coms[i] - fk.joint_origin[i], f_inertial)
            + n_child
            + _cross(fk.pos[i] - fk.joint_origin[i], f_child)
        )
        h[i] = fk.joint_axis[i] @ torque
        f_child = f_child + f_inertial
        n_child = torque  # moment about joint i origin, the parent's child point
    return h


def gravity_torque(model: RobotModel, q: np.ndarray, gravity: np.ndarray) -> np.ndarray:
    return bias_forces(model, q, np.zeros(model.n_dof), gravity)


def kinetic_energy(model: RobotModel, q: np.ndarray, qd: np.ndarray) -> float:
    qd = np.asarray(qd, dtype=float)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def potential_energy(model: RobotModel, q: np.ndarray, gravity: np.ndarray) -> float:
    fk = forward_kinematics(model, q)
    coms, _ = _world_inertials(model, fk)
    g = np.asarray(gravity, dtype=float)
    return -float(sum(model.links[i].mass * (g @ coms[i]) for i in range(model.n_dof)))


def scale_link_masses(model: RobotModel, factor: float) -> RobotModel:
    """Uniform density scaling (mass and inertia), used to inject model mismatch."""
    if factor <= 0.0:
        raise ModelError("mass scale must be > 0")
    links = tuple(
        LinkSpec(
            mass=link.mass * factor,
            com=link.com,
            inertia=np.asarray(link.inertia) * factor,
            parent=link.parent,
            origin_xyz=link.origin_xyz,
            origin_rpy=link.origin_rpy,
        )
        for link in model.links
    )
    return RobotModel(
        name=model.name,
        links=links,
        joints=model.joints,
        collision_bodies=model.collision_bodies,
    )


def _vec3(raw, where: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (3,):
        raise ModelError(f"{where}: expected 3 numbers, got {raw!r}")
    return arr


def _inertia_matrix(raw, where: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ModelError(f"{where}: inertia must be a diagonal 3-vector or 3x3 matrix")


def load_robot(path: str | Path) -> RobotModel:
    """Load a robot description file (JSON schema ``issf-wbc/robot/v1``)."""
    from .geometry import CollisionBody  # deferred: geometry imports this module

    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if doc.get("format") != ROBOT_FORMAT:
        raise ModelError(f"{path}: format must be {ROBOT_FORMAT!r}, got {doc.get('format')!r}")

    links = []
    for i, raw in enumerate(doc.get("links", [])):
        where = f"{path}: links[{i}]"
        origin = raw.get("origin", {})
        links.append(
            LinkSpec(
                mass=float(raw["mass"]),
                com=_vec3(raw.get("com", [0, 0, 0]), where + ".com"),
                inertia=_inertia_matrix(raw["inertia"], where),
                parent=int(raw.get("parent", i - 1)),
                origin_xyz=_vec3(origin.get("xyz", [0, 0, 0]), where + ".origin.xyz"),
                origin_rpy=_vec3(origin.get("rpy", [0, 0, 0]), where + ".origin.rpy"),
            )
        )
    joints = []
    for i, raw in enumerate(doc.get("joints", [])):
        where = f"{path}: joints[{i}]"
        axis = _vec3(raw["axis"], where + ".axis")
        norm = float(np.linalg.norm(axis))
        if norm == 0.0:
            raise ModelError(where + ": zero joint axis")
        limits = raw.get("limits", {})
        joints.append(
            JointSpec(
                axis=axis / norm,
                q_min=float(limits.get("lower", -math.pi)),
                q_max=float(limits.get("upper", math.pi)),
                qd_max=float(limits.get("velocity", math.inf)),
                tau_max=float(limits.get("torque", math.inf)),
            )
        )
    if len(links) != len(joints):
        raise ModelError(f"{path}: {len(links)} links vs {len(joints)} joints")

    bodies = []
    for i, raw in enumerate(doc.get("collision", [])):
        where = f"{path}: collision[{i}]"
        shape = raw.get("shape")
        if shape not in ("sphere", "capsule"):
            raise ModelError(where + f": shape must be sphere or capsule, got {shape!r}")
        p0 = _vec3(raw.get("p0", [0, 0, 0]), where + ".p0")
        p1 = _vec3(raw["p1"], where + ".p1") if shape == "capsule" else p0
        bodies.append(
            CollisionBody(
                name=str(raw.get("name", f"body{i}")),
                link=int(raw["link"]),
                radius=float(raw["radius"]),
                p0=p0,
                p1=p1,
            )
        )
        if not 0 <= bodies[-1].link < len(links):
            raise ModelError(where + f": link {bodies[-1].link} out of range")

    return RobotModel(
        name=str(doc.get("name", path.stem)),
        links=tuple(links),
        joints=tuple(joints),
        collision_bodies=tuple(bodies),
    )
