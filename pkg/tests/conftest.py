import itertools

import numpy as np
import pytest

from issf_wbc.model import JointSpec, LinkSpec, RobotModel
from issf_wbc.qpsolver import QpProblem


def random_chain(rng: np.random.Generator, n: int, planar: bool = False) -> RobotModel:
    """Random serial chain with valid inertias; planar=True keeps all axes +y."""
    links, joints = [], []
    for i in range(n):
        if planar:
            axis = np.array([0.0, 1.0, 0.0])
        else:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
        a = rng.normal(size=(3, 3)) * 0.05
        links.append(LinkSpec(
            mass=float(rng.uniform(0.4, 3.0)),
            com=rng.uniform(-0.2, 0.2, 3),
            inertia=a @ a.T + np.eye(3) * 0.01,
            parent=i - 1,
            origin_xyz=rng.uniform(-0.35, 0.35, 3),
            origin_rpy=rng.uniform(-1.0, 1.0, 3) if not planar else np.zeros(3),
        ))
        joints.append(JointSpec(axis=axis))
    return RobotModel(f"chain{n}", tuple(links), tuple(joints))


def two_link_planar(l1: float = 0.31, l2: float = 0.31, bodies=()) -> RobotModel:
    link = lambda L, parent: LinkSpec(
        mass=1.0, com=np.array([-L / 2, 0.0, 0.0]), inertia=np.eye(3) * 1e-3,
        parent=parent, origin_xyz=np.array([L, 0.0, 0.0]),
    )
    joint = JointSpec(axis=np.array([0.0, 0.0, 1.0]))
    return RobotModel("two", (link(l1, -1), link(l2, 0)), (joint, joint),
                      collision_bodies=tuple(bodies))


def enumerate_qp(problem: QpProblem, tol: float = 1e-9):
    """Exhaustive active-set enumeration: solve every equality-constrained
    subproblem, keep the feasible candidate with the lowest objective.
    Returns (objective, x) or None when no subset yields a feasible point."""
    n, m, p = problem.dims()
    A = problem.A_ineq if m else np.zeros((0, n))
    b = problem.b_ineq if m else np.zeros(0)
    Aeq = problem.A_eq if p else np.zeros((0, n))
    beq = problem.b_eq if p else np.zeros(0)
    best = None
    for k in range(0, min(m, n) + 1):
        for subset in itertools.combinations(range(m), k):
            rows = np.vstack([Aeq] + [A[i] for i in subset]) if (p or subset) else np.zeros((0, n))
            if rows.shape[0] and np.linalg.matrix_rank(rows) < rows.shape[0]:
                continue
            kk = rows.shape[0]
            kkt = np.zeros((n + kk, n + kk))
            kkt[:n, :n] = problem.H
            kkt[:n, n:] = rows.T
            kkt[n:, :n] = rows
            rhs = np.concatenate([-problem.g, beq, b[list(subset)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            if m and np.min(A @ x - b) < -tol:
                continue
            if p and np.max(np.abs(Aeq @ x - beq)) > tol:
                continue
            f = problem.objective(x)
            if best is None or f < best[0] - 1e-12:
                best = (f, x)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
