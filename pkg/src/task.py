"""
Velocity-tracking task: observations, commands, shaping and imitation rewards,
episode termination.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.dynamics import ContactReport, SimState
from src.exceptions import DatasetError

logger = logging.getLogger(__name__)

SHAPING_TERMS = (
    "lin_vel", "ang_vel", "collisions", "action_rate", "orientation",
    "ang_vel_penalty", "lin_vel_penalty", "joint_torques", "joint_motion", "feet_slip",
)
IMITATION_TERMS = ("joint_angles", "ee_position", "foot_height", "base_height")
# Imitation weights multiplied by the reward-sensitivity sweep
SWEPT_TERMS = ("joint_angles", "ee_position", "foot_height")


# ------------------------------------------------------------------
# Configuration models
# ------------------------------------------------------------------
class RewardWeights(BaseModel):
    """
    Reward weights. Each term contributes weight * dt * expression; tracking and
    imitation terms use exp(-||x||^2 / sigma).
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Shaping (task) terms
    lin_vel: float = 1.0
    ang_vel: float = 1.0
    collisions: float = 1.0
    action_rate: float = 0.01
    orientation: float = 5.0
    ang_vel_penalty: float = 0.05
    lin_vel_penalty: float = 2.0
    joint_torques: float = 1e-5
    joint_motion: float = 2.5e-7
    feet_slip: float = 0.04

    # Imitation terms
    joint_angles: float = 1.5
    ee_position: float = 1.5
    foot_height: float = 1.5
    base_height: float = 10.0

    sigma_tracking: float = 0.25
    sigma_q: float = 0.1
    sigma_ee: float = 0.1
    sigma_fh: float = 0.025

    dt: float = 0.005
    imitation_scale: float = 1.0

    @field_validator("sigma_tracking", "sigma_q", "sigma_ee", "sigma_fh", "dt")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be > 0")
        return value

    @field_validator(*SHAPING_TERMS, *IMITATION_TERMS, "imitation_scale")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("weights are magnitudes and must be >= 0")
        return value

    def scaled_imitation(self, scale: float) -> "RewardWeights":
        """Copy with the three exponential imitation weights multiplied by `scale`"""
        return self.model_copy(update={name: getattr(self, name) * scale for name in SWEPT_TERMS})


class CommandRanges(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lin_vel: Tuple[float, float] = (0.3, 1.0)
    ang_vel: Tuple[float, float] = (0.0, 0.0)

    @field_validator("lin_vel", "ang_vel")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] > value[1]:
            raise ValueError(f"range lower bound {value[0]} exceeds upper bound {value[1]}")
        return value


class ObservationScales(BaseModel):
    """Fixed per-block scaling applied to the observation vector fed to the networks"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lin_vel: float = 2.0
    ang_vel: float = 0.25
    q: float = 1.0
    qdot: float = 0.05


class TaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = 0.005
    pitch_limit: float = 1.0
    max_steps: int = 1000
    resample_interval: int = 0  # steps between mid-episode command resamples; 0 = reset only
    commands: CommandRanges = CommandRanges()
    obs_scales: ObservationScales = ObservationScales()

    @model_validator(mode="after")
    def _check(self) -> "TaskConfig":
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.pitch_limit <= 0:
            raise ValueError("pitch_limit must be > 0")
        if self.max_steps < 1 or self.resample_interval < 0:
            raise ValueError("max_steps must be >= 1 and resample_interval >= 0")
        return self


# ------------------------------------------------------------------
# Data models
# ------------------------------------------------------------------
@dataclass(frozen=True)
class Command:
    v_cmd: float
    w_cmd: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.v_cmd, self.w_cmd])


@dataclass(frozen=True)
class Observation:
    """Proprioceptive observation, identical for position and torque policies"""
    g_proj: np.ndarray
    v_cmd: float
    w_cmd: float
    q: np.ndarray
    qdot: np.ndarray
    a_prev: np.ndarray

    def as_array(self, scales: Optional[ObservationScales] = None) -> np.ndarray:
        """Layout: [g_proj(2), v_cmd, w_cmd, q(n), qdot(n), a_prev(n)]"""
        if scales is None:
            return np.concatenate((self.g_proj, [self.v_cmd, self.w_cmd], self.q, self.qdot, self.a_prev))
        return np.concatenate((
            self.g_proj,
            [self.v_cmd * scales.lin_vel, self.w_cmd * scales.ang_vel],
            self.q * scales.q,
            self.qdot * scales.qdot,
            self.a_prev,
        ))


def observation_size(n_joints: int) -> int:
    return 2 + 2 + 3 * n_joints


# ------------------------------------------------------------------
# Operations
# ------------------------------------------------------------------
def projected_gravity(pitch: float) -> np.ndarray:
    """
    World gravity direction (0, -1) expressed in the torso frame.

    The torso frame is the world frame rotated by -pitch (pitch is positive
    nose-down), so this is R(-pitch)^T @ (0, -1) = (sin(pitch), -cos(pitch)).
    """
    return np.array([np.sin(pitch), -np.cos(pitch)])


def observe(state: SimState, cmd: Command, a_prev: np.ndarray) -> Observation:
    a_prev = np.asarray(a_prev, dtype=float)
    if a_prev.shape != state.q.shape:
        raise ValueError(f"a_prev must have length {state.q.shape[0]}, got shape {a_prev.shape}")
    return Observation(
        g_proj=projected_gravity(state.pitch),
        v_cmd=float(cmd.v_cmd),
        w_cmd=float(cmd.w_cmd),
        q=state.q.copy(),
        qdot=state.qdot.copy(),
        a_prev=a_prev.copy(),
    )


def tracking_kernel(error, sigma: float) -> float:
    """Squared exponential exp(-||x||^2 / sigma)"""
    error = np.atleast_1d(np.asarray(error, dtype=float))
    return float(np.exp(-float(np.dot(error.ravel(), error.ravel())) / sigma))


def shaping_reward(
    prev: SimState,
    curr: SimState,
    torques: np.ndarray,
    contact: ContactReport,
    cmd: Command,
    a_prev: np.ndarray,
    a_curr: np.ndarray,
    w: RewardWeights,
) -> Tuple[float, Dict[str, float]]:
    """
    Task and regularization rewards for one transition.

    Returns:
        (total, per-term breakdown); total is the sum of the breakdown
    """
    dt = w.dt
    torques = np.asarray(torques, dtype=float)
    action_delta = (np.asarray(a_curr, dtype=float) - np.asarray(a_prev, dtype=float)) / dt
    qddot = (curr.qdot - prev.qdot) / dt
    vx, vz, pitch_rate = curr.base_vel
    slip = float(np.sum(np.abs(contact.slip_velocity[contact.in_contact])))

    breakdown = OrderedDict()
    breakdown["lin_vel"] = w.lin_vel * dt * tracking_kernel(cmd.v_cmd - vx, w.sigma_tracking)
    breakdown["ang_vel"] = w.ang_vel * dt * tracking_kernel(cmd.w_cmd - pitch_rate, w.sigma_tracking)
    breakdown["collisions"] = -w.collisions * dt * contact.n_collisions
    breakdown["action_rate"] = -w.action_rate * dt * float(np.linalg.norm(action_delta))
    breakdown["orientation"] = -w.orientation * dt * curr.pitch ** 2
    breakdown["ang_vel_penalty"] = -w.ang_vel_penalty * dt * pitch_rate ** 2
    breakdown["lin_vel_penalty"] = -w.lin_vel_penalty * dt * vz ** 2
    breakdown["joint_torques"] = -w.joint_torques * dt * float(torques @ torques)
    breakdown["joint_motion"] = -w.joint_motion * dt * float(qddot @ qddot + curr.qdot @ curr.qdot)
    breakdown["feet_slip"] = -w.feet_slip * dt * slip

    total = float(sum(breakdown.values()))
    return total, dict(breakdown)


def imitation_reward(
    state: SimState,
    ref,
    fk_out: Tuple[np.ndarray, np.ndarray],
    w: RewardWeights,
) -> Tuple[float, Dict[str, float]]:
    """
    Imitation rewards against a reference frame.

    Args:
        state: achieved state
        ref: ImitationFrame with q_hat, h_hat, r_e_hat, r_z_hat
        fk_out: (foot world positions, foot positions in the torso frame) for `state`
        w: reward weights

    Returns:
        (total, per-term breakdown)
    """
    foot_world, ee_body = fk_out
    if ref.q_hat.shape != state.q.shape:
        raise DatasetError(
            f"reference has {ref.q_hat.shape[0]} joint angles, robot has {state.q.shape[0]}"
        )
    if ref.r_e_hat.shape != ee_body.shape or ref.r_z_hat.shape != foot_world[:, 1].shape:
        raise DatasetError(
            f"reference end-effector shape {ref.r_e_hat.shape} does not match robot feet {ee_body.shape}"
        )

    dt = w.dt
    scale = w.imitation_scale
    breakdown = OrderedDict()
    breakdown["joint_angles"] = scale * w.joint_angles * dt * tracking_kernel(ref.q_hat - state.q, w.sigma_q)
    breakdown["ee_position"] = scale * w.ee_position * dt * tracking_kernel(ref.r_e_hat - ee_body, w.sigma_ee)
    breakdown["foot_height"] = scale * w.foot_height * dt * tracking_kernel(ref.r_z_hat - foot_world[:, 1], w.sigma_fh)
    breakdown["base_height"] = -scale * w.base_height * dt * abs(ref.h_hat - state.height)

    total = float(sum(breakdown.values()))
    return total, dict(breakdown)


def sample_command(rng: np.random.Generator, ranges: CommandRanges) -> Command:
    """Uniform command sample; consumes exactly two draws from `rng`"""
    v = rng.uniform(ranges.lin_vel[0], ranges.lin_vel[1])
    w = rng.uniform(ranges.ang_vel[0], ranges.ang_vel[1])
    return Command(v_cmd=float(v), w_cmd=float(w))


def terminate(
    state: SimState,
    contact: ContactReport,
    cfg: Optional[TaskConfig] = None,
) -> Tuple[bool, str]:
    """
    Episode termination check.

    Returns:
        (done, reason) with reason in {"base_contact", "orientation", "timeout", ""}
    """
    cfg = cfg or TaskConfig()
    if contact.torso_contact:
        return True, "base_contact"
    if abs(state.pitch) > cfg.pitch_limit:
        return True, "orientation"
    if state.time_step >= cfg.max_steps:
        return True, "timeout"
    return False, ""
