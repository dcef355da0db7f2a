"""
Action-space adapters: raw policy output -> joint torques.

Modes:
    position  - PD tracking of q_nom + scale * raw
    torque    - scale * raw applied directly
    decap     - torque mode plus a PD prior on the reference angles, decayed by gamma^(t/k)
    assisted  - torque mode plus a low-gain PD on a position policy's target
"""
import logging
import math
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.dynamics import SimState
from src.exceptions import ConfigError
from src.robots import RobotModel

logger = logging.getLogger(__name__)

ActionMode = Literal["position", "torque", "decap", "assisted"]

DEFAULT_SCALES = {"position": 0.25, "torque": 8.0, "decap": 8.0, "assisted": 8.0}
ASSIST_GAIN_RATIO = 0.25


# ------------------------------------------------------------------
# Configuration models
# ------------------------------------------------------------------
class Gains(BaseModel):
    """PD gains; scalars apply to every joint"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kp: Union[float, List[float]] = 20.0
    kd: Union[float, List[float]] = 0.5

    @field_validator("kp", "kd")
    @classmethod
    def _non_negative(cls, value):
        values = value if isinstance(value, list) else [value]
        if any(v < 0 for v in values):
            raise ValueError("gains must be >= 0")
        return value

    def arrays(self, n_joints: int):
        kp = np.broadcast_to(np.asarray(self.kp, dtype=float), (n_joints,))
        kd = np.broadcast_to(np.asarray(self.kd, dtype=float), (n_joints,))
        return kp, kd

    def scaled(self, factor: float) -> "Gains":
        def _scale(value):
            return [v * factor for v in value] if isinstance(value, list) else value * factor
        return Gains(kp=_scale(self.kp), kd=_scale(self.kd))


class DecaySchedule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    gamma_decay: float = 0.99
    k: float = 100.0

    @model_validator(mode="after")
    def _check(self) -> "DecaySchedule":
        if not 0.0 < self.gamma_decay < 1.0:
            raise ValueError("gamma_decay must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        return self


class ActionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: ActionMode = "position"
    action_scale: Optional[float] = None  # None = mode default (8.0 torque, 0.25 position)
    gains: Gains = Gains()
    schedule: DecaySchedule = DecaySchedule()
    assist_gains: Optional[Gains] = None  # None = 0.25 x gains
    decay_clock: Literal["global", "episode"] = "global"

    @field_validator("action_scale")
    @classmethod
    def _positive_scale(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value <= 0:
            raise ValueError("action_scale must be > 0")
        return value

    @property
    def scale(self) -> float:
        return self.action_scale if self.action_scale is not None else DEFAULT_SCALES[self.mode]

    @property
    def effective_assist_gains(self) -> Gains:
        return self.assist_gains if self.assist_gains is not None else self.gains.scaled(ASSIST_GAIN_RATIO)

    def with_mode(self, mode: ActionMode) -> "ActionConfig":
        """Same gains and schedule under another mode; a default scale follows the new mode"""
        return self.model_copy(update={"mode": mode})


class DecayClock:
    """
    Global step counter shared by every environment of a training run.

    Incremented once per synchronized step of the environment pool.
    """

    def __init__(self, start: int = 0):
        self.value = int(start)

    def tick(self) -> int:
        self.value += 1
        return self.value


# ------------------------------------------------------------------
# Operations
# ------------------------------------------------------------------
def pd_torque(q_des, q, qdot, gains: Gains) -> np.ndarray:
    """tau = Kp (q_des - q) + Kd (-qdot), element-wise, unclamped"""
    q_des = np.asarray(q_des, dtype=float)
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if not q_des.shape == q.shape == qdot.shape:
        raise ValueError(f"length mismatch: q_des {q_des.shape}, q {q.shape}, qdot {qdot.shape}")
    kp, kd = gains.arrays(q.shape[0])
    return kp * (q_des - q) + kd * (-qdot)


def decay_factor(schedule: DecaySchedule, t: float) -> float:
    """gamma^(t/k) with a real-valued exponent"""
    if t < 0:
        raise ValueError(f"decay step must be >= 0, got {t}")
    return float(schedule.gamma_decay ** (t / schedule.k))


def first_step_below(schedule: DecaySchedule, threshold: float) -> int:
    """Smallest integer step whose decay factor is strictly below `threshold`"""
    bound = schedule.k * math.log(threshold) / math.log(schedule.gamma_decay)
    t = max(int(math.floor(bound)), 0)
    while decay_factor(schedule, t) >= threshold:
        t += 1
    while t > 0 and decay_factor(schedule, t - 1) < threshold:
        t -= 1
    return t


def position_target(raw_action, model: RobotModel, scale: float = DEFAULT_SCALES["position"]) -> np.ndarray:
    """Desired joint angles of a position policy: offsets around the nominal pose"""
    return model.q_nom + scale * np.asarray(raw_action, dtype=float)


def action_torque(
    raw_action,
    state: SimState,
    ref,
    pos_policy_target,
    cfg: ActionConfig,
    t: float,
    model: RobotModel,
) -> np.ndarray:
    """Torque produced by the adapter before clamping to the model limits"""
    raw = np.asarray(raw_action, dtype=float)
    if raw.shape != (model.n_joints,):
        raise ValueError(f"raw action must have length {model.n_joints}, got shape {raw.shape}")

    if cfg.mode == "position":
        return pd_torque(position_target(raw, model, cfg.scale), state.q, state.qdot, cfg.gains)

    torque = cfg.scale * raw
    if cfg.mode == "decap":
        if ref is None:
            raise ConfigError("decap mode needs a reference imitation frame")
        prior = pd_torque(ref.q_hat, state.q, state.qdot, cfg.gains)
        return torque + decay_factor(cfg.schedule, t) * prior
    if cfg.mode == "assisted":
        if pos_policy_target is None:
            raise ConfigError("assisted mode needs the position policy's target angles")
        return torque + pd_torque(pos_policy_target, state.q, state.qdot, cfg.effective_assist_gains)
    return torque


def apply_action(
    raw_action,
    state: SimState,
    ref,
    pos_policy_target,
    cfg: ActionConfig,
    t: float,
    model: RobotModel,
) -> np.ndarray:
    """
    Map a raw policy output to clamped joint torques.

    Args:
        raw_action: unscaled policy output
        state: current simulator state
        ref: ImitationFrame (decap mode)
        pos_policy_target: desired angles from a position policy (assisted mode)
        cfg: action configuration
        t: decay clock value (decap mode)
        model: robot description (nominal pose and torque limits)

    Returns:
        Torques with |tau_i| <= torque_limit_i
    """
    torque = action_torque(raw_action, state, ref, pos_policy_target, cfg, t, model)
    return np.clip(torque, -model.tau_max, model.tau_max)
