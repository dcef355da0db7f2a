"""
Deterministic planar rigid-body simulation with penalty ground contact.

Generalized coordinates are (x, z, phi, q_1..q_n) for a floating base and
(q_1..q_n) for a fixed base. All angles inside this module are
counter-clockwise in the x-z plane (x forward, z up); the public `pitch`
stored in SimState is the rotation about the lateral axis, positive nose-down,
so phi = -pitch.

Equations of motion are assembled per link Newton-Euler style and projected
onto the generalized coordinates:

    M(g) g_ddot = sum_i J_i^T m_i (gravity - a_i^vp) + sum_c J_c^T F_c + S (tau - D q_dot)

where a_i^vp is the velocity-product acceleration of link i's centre of mass.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from src.exceptions import SimulationError
from src.robots import RobotModel

logger = logging.getLogger(__name__)

TORSO = -1


# ------------------------------------------------------------------
# Data models
# ------------------------------------------------------------------
def _frozen_array(values, size: Optional[int] = None) -> np.ndarray:
    array = np.array(values, dtype=float)
    if size is not None and array.shape != (size,):
        raise SimulationError(f"expected a vector of length {size}, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SimState:
    """
    Physical state of one robot.

    Attributes:
        q: joint angles (rad)
        qdot: joint velocities (rad/s)
        base_pos: (x, z, pitch) in m, m, rad
        base_vel: (vx, vz, pitch_rate) in m/s, m/s, rad/s
        time_step: steps since reset
        tau: torque applied during the step that produced this state (N·m)
    """
    q: np.ndarray
    qdot: np.ndarray
    base_pos: np.ndarray
    base_vel: np.ndarray
    time_step: int = 0
    tau: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(np.atleast_1d(self.q))
        object.__setattr__(self, "q", _frozen_array(self.q, n))
        object.__setattr__(self, "qdot", _frozen_array(self.qdot, n))
        object.__setattr__(self, "base_pos", _frozen_array(self.base_pos, 3))
        object.__setattr__(self, "base_vel", _frozen_array(self.base_vel, 3))
        tau = np.zeros(n) if self.tau is None else self.tau
        object.__setattr__(self, "tau", _frozen_array(tau, n))

    @property
    def height(self) -> float:
        return float(self.base_pos[1])

    @property
    def pitch(self) -> float:
        return float(self.base_pos[2])

    @property
    def pitch_rate(self) -> float:
        return float(self.base_vel[2])

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))
            and np.all(np.isfinite(self.base_pos)) and np.all(np.isfinite(self.base_vel))
        )


@dataclass(frozen=True)
class ContactReport:
    """Per-foot contact forces plus per-body collision flags (index 0 = torso, i+1 = link i)"""
    normal: np.ndarray
    tangential: np.ndarray
    penetration: np.ndarray
    in_contact: np.ndarray
    slip_velocity: np.ndarray
    collisions: np.ndarray

    @property
    def n_collisions(self) -> int:
        return int(np.count_nonzero(self.collisions))

    @property
    def torso_contact(self) -> bool:
        return bool(self.collisions[0])


@dataclass(frozen=True)
class _ContactPoint:
    kind: str        # "foot" | "torso" | "knee"
    body: int        # link index or TORSO
    local: Tuple[float, float]
    owner: int       # foot index for feet, body flag index otherwise


def initial_state(model: RobotModel, height: Optional[float] = None, x: float = 0.0) -> SimState:
    """Robot at rest in its nominal pose"""
    return SimState(
        q=model.q_nom.copy(),
        qdot=np.zeros(model.n_joints),
        base_pos=np.array([x, model.nominal_height if height is None else height, 0.0]),
        base_vel=np.zeros(3),
        time_step=0,
    )


# ------------------------------------------------------------------
# Kinematics
# ------------------------------------------------------------------
def _rotate(phi: float, v) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _perp(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


class _Kinematics:
    """Body frames (and optionally body angular velocities) for one configuration"""

    def __init__(
        self,
        model: RobotModel,
        base_pos: np.ndarray,
        q: np.ndarray,
        base_vel: Optional[np.ndarray] = None,
        qdot: Optional[np.ndarray] = None,
    ):
        self.model = model
        self.p0 = np.array(base_pos[:2], dtype=float)
        self.phi0 = -float(base_pos[2])

        n = model.n_joints
        self.angles = np.empty(n)
        self.origins = np.empty((n, 2))
        for i, link in enumerate(model.links):
            if link.parent == TORSO:
                parent_angle, parent_origin = self.phi0, self.p0
            else:
                parent_angle, parent_origin = self.angles[link.parent], self.origins[link.parent]
            self.origins[i] = parent_origin + _rotate(parent_angle, link.offset)
            self.angles[i] = parent_angle + q[i]

        self.omega0 = 0.0
        self.omegas = np.zeros(n)
        if base_vel is not None and qdot is not None:
            self.omega0 = 0.0 if model.fixed_base else -float(base_vel[2])
            for i, link in enumerate(model.links):
                parent_omega = self.omega0 if link.parent == TORSO else self.omegas[link.parent]
                self.omegas[i] = parent_omega + qdot[i]

    def point(self, body: int, local) -> np.ndarray:
        if body == TORSO:
            return self.p0 + _rotate(self.phi0, local)
        return self.origins[body] + _rotate(self.angles[body], local)

    def _chain(self, body: int) -> Tuple[int, ...]:
        return () if body == TORSO else self.model.chains[body]

    def jacobian(self, body: int, point: np.ndarray) -> np.ndarray:
        """d(point)/d(g) as a 2 x n_coords matrix"""
        model = self.model
        J = np.zeros((2, model.n_coords))
        if not model.fixed_base:
            J[0, 0] = 1.0
            J[1, 1] = 1.0
            J[:, 2] = _perp(point - self.p0)
        for j in self._chain(body):
            J[:, model.coord_index(j)] = _perp(point - self.origins[j])
        return J

    def angular_jacobian(self, body: int) -> np.ndarray:
        model = self.model
        w = np.zeros(model.n_coords)
        if not model.fixed_base:
            w[2] = 1.0
        for j in self._chain(body):
            w[model.coord_index(j)] = 1.0
        return w

    def velocity_product(self, body: int, point: np.ndarray) -> np.ndarray:
        """Centripetal part of the point acceleration: -sum_k omega_k^2 * segment_k"""
        chain = self._chain(body)
        anchors = [self.p0] + [self.origins[j] for j in chain] + [point]
        rates = [self.omega0] + [self.omegas[j] for j in chain]
        bias = np.zeros(2)
        for k, rate in enumerate(rates):
            bias -= rate * rate * (anchors[k + 1] - anchors[k])
        return bias

    def to_body(self, point: np.ndarray) -> np.ndarray:
        return _rotate(-self.phi0, point - self.p0)


def forward_kinematics(
    q: np.ndarray,
    base_pose: np.ndarray,
    model: RobotModel,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Foot positions of a robot configuration.

    Args:
        q: joint angles (rad)
        base_pose: (x, z, pitch)
        model: robot description

    Returns:
        (foot world positions, foot positions in the torso frame), each (n_feet, 2)
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_joints,):
        raise SimulationError(f"q must have length {model.n_joints}, got shape {q.shape}")

    kin = _Kinematics(model, np.asarray(base_pose, dtype=float), q)
    world = np.array([kin.point(f, (0.0, -model.links[f].length)) for f in model.feet])
    body = np.array([kin.to_body(p) for p in world])
    return world, body


def foot_velocities(state: SimState, model: RobotModel) -> np.ndarray:
    """World velocities of the foot tips, (n_feet, 2)"""
    kin = _Kinematics(model, state.base_pos, state.q, state.base_vel, state.qdot)
    _, gdot = _pack(state, model)
    out = []
    for f in model.feet:
        tip = kin.point(f, (0.0, -model.links[f].length))
        out.append(kin.jacobian(f, tip) @ gdot)
    return np.array(out)


# ------------------------------------------------------------------
# Contact
# ------------------------------------------------------------------
@lru_cache(maxsize=32)
def _contact_points(model: RobotModel) -> Tuple[_ContactPoint, ...]:
    points: List[_ContactPoint] = []
    for f_idx, link_idx in enumerate(model.feet):
        link = model.links[link_idx]
        points.append(_ContactPoint("foot", link_idx, (0.0, -link.length), f_idx))
        if link.heel > 0:
            points.append(_ContactPoint("foot", link_idx, (0.0, link.heel), f_idx))

    hl, hh = model.base.half_length, model.base.half_height
    for sx, sz in ((1, -1), (-1, -1), (1, 1), (-1, 1)):
        points.append(_ContactPoint("torso", TORSO, (sx * hl, sz * hh), 0))

    for i in model.knee_links:
        points.append(_ContactPoint("knee", i, (0.0, -model.links[i].length), i + 1))
    return tuple(points)


def coulomb_clamp(demand: float, normal: float, mu: float) -> float:
    """Clamp a tangential force demand to the friction cone |F_t| <= mu * N"""
    limit = mu * max(normal, 0.0)
    return float(np.clip(demand, -limit, limit))


def normal_force(penetration: float, penetration_rate: float, k_n: float, c_n: float) -> float:
    """Spring-damper normal force, never pulling the body into the ground"""
    if penetration <= 0.0:
        return 0.0
    return max(k_n * penetration + c_n * penetration_rate, 0.0)


def _evaluate_contacts(
    kin: _Kinematics,
    gdot: np.ndarray,
    model: RobotModel,
) -> Tuple[ContactReport, List[Tuple[np.ndarray, np.ndarray]]]:
    params = model.contact
    n_feet = model.n_feet
    normal = np.zeros(n_feet)
    tangential = np.zeros(n_feet)
    penetration = np.zeros(n_feet)
    in_contact = np.zeros(n_feet, dtype=bool)
    slip_sum = np.zeros(n_feet)
    slip_count = np.zeros(n_feet)
    collisions = np.zeros(model.n_joints + 1, dtype=bool)
    loads: List[Tuple[np.ndarray, np.ndarray]] = []

    for cp in _contact_points(model):
        position = kin.point(cp.body, cp.local)
        depth = -position[1]
        if depth <= 0.0:
            continue

        J = kin.jacobian(cp.body, position)
        velocity = J @ gdot
        f_n = normal_force(depth, -velocity[1], params.k_n, params.c_n)
        f_t = coulomb_clamp(-params.k_t * velocity[0], f_n, params.mu)
        loads.append((J, np.array([f_t, f_n])))

        if cp.kind == "foot":
            normal[cp.owner] += f_n
            tangential[cp.owner] += f_t
            penetration[cp.owner] = max(penetration[cp.owner], depth)
            in_contact[cp.owner] = True
            slip_sum[cp.owner] += velocity[0]
            slip_count[cp.owner] += 1
        else:
            collisions[cp.owner] = True

    slip = np.divide(slip_sum, slip_count, out=np.zeros(n_feet), where=slip_count > 0)
    report = ContactReport(
        normal=normal,
        tangential=tangential,
        penetration=penetration,
        in_contact=in_contact,
        slip_velocity=slip,
        collisions=collisions,
    )
    return report, loads


def contact_forces(state: SimState, model: RobotModel) -> ContactReport:
    """Penalty contact forces acting on the robot in `state`"""
    kin = _Kinematics(model, state.base_pos, state.q, state.base_vel, state.qdot)
    _, gdot = _pack(state, model)
    report, _ = _evaluate_contacts(kin, gdot, model)
    return report


# ------------------------------------------------------------------
# Generalized dynamics
# ------------------------------------------------------------------
def _pack(state: SimState, model: RobotModel) -> Tuple[np.ndarray, np.ndarray]:
    if model.fixed_base:
        return state.q.copy(), state.qdot.copy()
    x, z, pitch = state.base_pos
    vx, vz, pitch_rate = state.base_vel
    g = np.concatenate(([x, z, -pitch], state.q))
    gdot = np.concatenate(([vx, vz, -pitch_rate], state.qdot))
    return g, gdot


def _unpack(g: np.ndarray, gdot: np.ndarray, like: SimState, model: RobotModel, tau: np.ndarray) -> SimState:
    if model.fixed_base:
        return SimState(q=g, qdot=gdot, base_pos=like.base_pos, base_vel=like.base_vel,
                        time_step=like.time_step + 1, tau=tau)
    return SimState(
        q=g[3:],
        qdot=gdot[3:],
        base_pos=np.array([g[0], g[1], -g[2]]),
        base_vel=np.array([gdot[0], gdot[1], -gdot[2]]),
        time_step=like.time_step + 1,
        tau=tau,
    )


def _assemble(kin: _Kinematics, model: RobotModel) -> Tuple[np.ndarray, np.ndarray]:
    """Mass matrix and the gravity + velocity-product generalized force"""
    n = model.n_coords
    M = np.zeros((n, n))
    Q = np.zeros(n)
    gravity = np.array([0.0, -model.gravity])

    if not model.fixed_base:
        M[0, 0] += model.base.mass
        M[1, 1] += model.base.mass
        M[2, 2] += model.base.inertia
        Q[1] -= model.base.mass * model.gravity

    for i, link in enumerate(model.links):
        com = kin.point(i, (0.0, -link.com * link.length))
        J = kin.jacobian(i, com)
        w = kin.angular_jacobian(i)
        M += link.mass * (J.T @ J) + link.inertia * np.outer(w, w)
        Q += J.T @ (link.mass * (gravity - kin.velocity_product(i, com)))
    return M, Q


def mass_matrix(state: SimState, model: RobotModel) -> np.ndarray:
    kin = _Kinematics(model, state.base_pos, state.q)
    M, _ = _assemble(kin, model)
    return M


def mechanical_energy(state: SimState, model: RobotModel) -> float:
    """Kinetic plus gravitational potential energy (J)"""
    kin = _Kinematics(model, state.base_pos, state.q)
    M, _ = _assemble(kin, model)
    _, gdot = _pack(state, model)
    kinetic = 0.5 * float(gdot @ M @ gdot)

    potential = 0.0
    if not model.fixed_base:
        potential += model.base.mass * model.gravity * state.base_pos[1]
    for i, link in enumerate(model.links):
        com = kin.point(i, (0.0, -link.com * link.length))
        potential += link.mass * model.gravity * com[1]
    return kinetic + potential


def _check_inputs(state: SimState, torques: np.ndarray, model: RobotModel, dt: float) -> None:
    if not dt > 0:
        raise SimulationError(f"dt must be positive, got {dt}")
    if torques.shape != (model.n_joints,):
        raise SimulationError(f"expected {model.n_joints} torques, got shape {torques.shape}")
    if state.q.shape != (model.n_joints,):
        raise SimulationError(f"state has {state.q.shape[0]} joints, model '{model.name}' has {model.n_joints}")
    if not np.all(np.isfinite(torques)):
        raise SimulationError(f"non-finite torque command: {torques}")
    if not state.is_finite():
        raise SimulationError(
            f"non-finite state at step {state.time_step}: q={state.q}, base_pos={state.base_pos}"
        )


def step(
    state: SimState,
    torques: np.ndarray,
    model: RobotModel,
    dt: float,
) -> Tuple[SimState, ContactReport]:
    """
    Advance one semi-implicit Euler step (velocities first, then positions).

    Args:
        state: current state
        torques: commanded joint torques (N·m); clamped to the model limits
        model: robot description
        dt: time step (s)

    Returns:
        (next state, contact report of the forces applied during the step)
    """
    torques = np.asarray(torques, dtype=float)
    _check_inputs(state, torques, model, dt)

    tau = np.clip(torques, -model.tau_max, model.tau_max)
    g, gdot = _pack(state, model)
    kin = _Kinematics(model, state.base_pos, state.q, state.base_vel, state.qdot)

    M, Q = _assemble(kin, model)
    report, loads = _evaluate_contacts(kin, gdot, model)
    for J, force in loads:
        Q += J.T @ force
    for j, link in enumerate(model.links):
        Q[model.coord_index(j)] += tau[j] - link.damping * state.qdot[j]

    gddot = np.linalg.solve(M, Q)
    gdot_next = gdot + dt * gddot
    g_next = g + dt * gdot_next

    # Hard joint limits: clamp and stop the joint
    offset = 0 if model.fixed_base else 3
    q_next = g_next[offset:]
    clamped = (q_next < model.q_lower) | (q_next > model.q_upper)
    if np.any(clamped):
        g_next[offset:] = np.clip(q_next, model.q_lower, model.q_upper)
        gdot_next[offset:][clamped] = 0.0

    if not (np.all(np.isfinite(g_next)) and np.all(np.isfinite(gdot_next))):
        raise SimulationError(f"simulation diverged at step {state.time_step} ({model.name})")

    return _unpack(g_next, gdot_next, state, model, tau), report
