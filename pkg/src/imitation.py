"""
Imitation data recorded from a trained position policy.

The dataset stores the angles the simulated robot actually reached (tracked
state), not the targets the position policy asked for.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src import dynamics
from src.config import settings
from src.control import Gains
from src.env import EnvSettings, EpisodeTrace, LocomotionEnv
from src.exceptions import ConfigError, DatasetError
from src.robots import RobotModel
from src.task import Command

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_TRAJECTORY_LENGTH = 1


# ------------------------------------------------------------------
# Data models
# ------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ImitationFrame:
    q_hat: np.ndarray      # tracked joint angles (rad)
    h_hat: float           # base height (m)
    r_e_hat: np.ndarray    # foot positions in the torso frame, (n_feet, 2)
    r_z_hat: np.ndarray    # foot heights in the world frame, (n_feet,)
    v_cmd: float
    w_cmd: float
    step_index: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImitationFrame):
            return NotImplemented
        return (
            np.array_equal(self.q_hat, other.q_hat)
            and self.h_hat == other.h_hat
            and np.array_equal(self.r_e_hat, other.r_e_hat)
            and np.array_equal(self.r_z_hat, other.r_z_hat)
            and self.v_cmd == other.v_cmd
            and self.w_cmd == other.w_cmd
            and self.step_index == other.step_index
        )

    def values(self) -> List[float]:
        """Flat field order: h_hat, q_hat..., r_e_hat (x, z per foot)..., r_z_hat..."""
        return [self.h_hat, *self.q_hat.tolist(), *self.r_e_hat.ravel().tolist(), *self.r_z_hat.tolist()]


@dataclass(frozen=True)
class DatasetHeader:
    robot: str
    dt: float
    kp: Tuple[float, ...]
    kd: Tuple[float, ...]
    checkpoint_id: str
    n_joints: int
    n_feet: int
    settle_steps: int = 100
    format_version: int = FORMAT_VERSION


@dataclass(frozen=True)
class Trajectory:
    command: Command
    frames: Tuple[ImitationFrame, ...]

    def __len__(self) -> int:
        return len(self.frames)

    def q_series(self) -> np.ndarray:
        return np.stack([f.q_hat for f in self.frames])


@dataclass(frozen=True)
class ImitationDataset:
    header: DatasetHeader
    trajectories: Tuple[Trajectory, ...]

    def lookup(self, cmd: Command, t: int, dt: Optional[float] = None) -> ImitationFrame:
        return lookup(self, cmd, t, dt)

    @property
    def n_frames(self) -> int:
        return sum(len(traj) for traj in self.trajectories)


def frame_from_state(state: dynamics.SimState, model: RobotModel, cmd: Command, step_index: int) -> ImitationFrame:
    foot_world, ee_body = dynamics.forward_kinematics(state.q, state.base_pos, model)
    return ImitationFrame(
        q_hat=state.q.copy(),
        h_hat=state.height,
        r_e_hat=np.array(ee_body, dtype=float),
        r_z_hat=np.array(foot_world[:, 1], dtype=float),
        v_cmd=float(cmd.v_cmd),
        w_cmd=float(cmd.w_cmd),
        step_index=step_index,
    )


# ------------------------------------------------------------------
# Lookup and metrics
# ------------------------------------------------------------------
def lookup(ds: ImitationDataset, cmd: Command, t: int, dt: Optional[float] = None) -> ImitationFrame:
    """
    Reference frame for command `cmd` at episode step `t`.

    Picks the trajectory whose command is nearest in (v_cmd, w_cmd); ties go to
    the lower index. The frame index wraps modulo the trajectory length.
    """
    if not ds.trajectories:
        raise DatasetError("imitation dataset has no trajectories")
    if dt is not None and dt != ds.header.dt:
        raise DatasetError(f"imitation dataset dt {ds.header.dt} does not match run dt {dt}")

    best, best_dist = 0, None
    for index, traj in enumerate(ds.trajectories):
        dist = (traj.command.v_cmd - cmd.v_cmd) ** 2 + (traj.command.w_cmd - cmd.w_cmd) ** 2
        if best_dist is None or dist < best_dist:
            best, best_dist = index, dist
    frames = ds.trajectories[best].frames
    return frames[int(t) % len(frames)]


def rmse(tracked, reference) -> float:
    """sqrt(mean((tracked - reference)^2)) over steps and joints"""
    tracked = np.asarray(tracked, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if tracked.shape != reference.shape:
        raise ValueError(f"series shapes differ: {tracked.shape} vs {reference.shape}")
    if tracked.size == 0:
        raise ValueError("rmse of empty series")
    return float(np.sqrt(np.mean((tracked - reference) ** 2)))


# ------------------------------------------------------------------
# Recording
# ------------------------------------------------------------------
def _check_policy(policy, model: RobotModel) -> None:
    if policy.mode and policy.mode != "position":
        raise ConfigError(f"imitation data must come from a position policy, got a '{policy.mode}' policy")
    if policy.robot and policy.robot != model.name:
        raise ConfigError(f"policy was trained on '{policy.robot}', not '{model.name}'")
    if policy.act_dim != model.n_joints:
        raise ConfigError(f"policy outputs {policy.act_dim} actions, '{model.name}' has {model.n_joints} joints")


def _recording_env(env: EnvSettings, steps: int, gains: Optional[Gains] = None) -> EnvSettings:
    action = env.action.with_mode("position")
    if gains is not None:
        action = action.model_copy(update={"gains": gains})
    task = env.task.model_copy(update={"max_steps": steps + 1, "resample_interval": 0})
    return EnvSettings(model=env.model, task=task, rewards=env.rewards, action=action)


def rollout_position_policy(
    policy,
    env: EnvSettings,
    command: Command,
    steps: int,
    gains: Optional[Gains] = None,
    seed: int = 0,
) -> Tuple[EpisodeTrace, List[ImitationFrame]]:
    """
    Deterministic (mean action) rollout of a position policy under a fixed command.

    Returns:
        (trace with desired and tracked angles, tracked frames per step)
    """
    _check_policy(policy, env.model)
    sim = LocomotionEnv(_recording_env(env, steps, gains), seed=seed, fixed_command=command)
    obs = sim.reset(command)
    trace = EpisodeTrace(command=command)
    frames: List[ImitationFrame] = []
    for step_index in range(steps):
        result = sim.step(policy.act(obs, deterministic=True))
        if result.done:
            logger.warning(f"Recording episode for v_cmd={command.v_cmd:.3f} ended early ({result.reason}) at step {step_index}")
            trace.reason = result.reason
            break
        trace.append(result)
        frames.append(frame_from_state(result.state, env.model, command, step_index))
        obs = result.obs
    return trace, frames


def record(
    policy,
    commands: Sequence[Command],
    steps: int,
    env: EnvSettings,
    settle_steps: Optional[int] = None,
    seed: int = 0,
    checkpoint_id: str = "",
    show_progress: bool = True,
) -> ImitationDataset:
    """
    Record one trajectory per command from a trained position policy.

    The first `settle_steps` frames of every rollout are discarded.
    """
    settle = settings.SETTLE_STEPS if settle_steps is None else int(settle_steps)
    if steps <= settle:
        raise ConfigError(f"steps ({steps}) must exceed the settle window ({settle})")
    if not commands:
        raise ConfigError("record needs at least one command")

    trajectories = []
    iterator = tqdm(commands, desc="Recording", disable=not show_progress)
    for command in iterator:
        _, frames = rollout_position_policy(policy, env, command, steps, seed=seed)
        kept = frames[settle:]
        if len(kept) < MIN_TRAJECTORY_LENGTH:
            raise DatasetError(f"rollout for v_cmd={command.v_cmd} fell before the settle window ended")
        trajectories.append(Trajectory(command=command, frames=tuple(kept)))

    kp, kd = env.action.gains.arrays(env.model.n_joints)
    header = DatasetHeader(
        robot=env.model.name,
        dt=env.task.dt,
        kp=tuple(float(v) for v in kp),
        kd=tuple(float(v) for v in kd),
        checkpoint_id=checkpoint_id,
        n_joints=env.model.n_joints,
        n_feet=env.model.n_feet,
        settle_steps=settle,
    )
    logger.info(f"Recorded {len(trajectories)} trajectories ({sum(len(t) for t in trajectories)} frames)")
    return ImitationDataset(header=header, trajectories=tuple(trajectories))


@dataclass(frozen=True)
class GainSensitivity:
    rmse_desired: float
    rmse_tracked: float
    steps: int

    @property
    def ratio(self) -> float:
        return self.rmse_desired / self.rmse_tracked if self.rmse_tracked > 0 else float("inf")


def gain_sensitivity(
    policy,
    env: EnvSettings,
    gains_a: Gains,
    gains_b: Gains,
    command: Command,
    steps: int,
    settle_steps: Optional[int] = None,
) -> GainSensitivity:
    """
    Compare desired-angle and tracked-angle traces of one position policy under
    two PD gain settings. Both rollouts are compared over their common length
    after the settle window.
    """
    settle = settings.SETTLE_STEPS if settle_steps is None else int(settle_steps)
    trace_a, _ = rollout_position_policy(policy, env, command, steps, gains=gains_a)
    trace_b, _ = rollout_position_policy(policy, env, command, steps, gains=gains_b)
    n = min(trace_a.length, trace_b.length)
    if n <= settle:
        raise DatasetError(f"rollouts too short for comparison ({n} steps, settle {settle})")
    window = slice(settle, n)
    return GainSensitivity(
        rmse_desired=rmse(np.stack(trace_a.q_des[window]), np.stack(trace_b.q_des[window])),
        rmse_tracked=rmse(np.stack(trace_a.q[window]), np.stack(trace_b.q[window])),
        steps=n - settle,
    )


# ------------------------------------------------------------------
# Persistence
# ------------------------------------------------------------------
def _fmt(value: float) -> str:
    return format(float(value), f".{settings.FLOAT_DIGITS}g")


def save_dataset(ds: ImitationDataset, path: Union[str, Path]) -> Path:
    """
    Write the `.imit` text format: one JSON header line, then one line per frame
    with whitespace-separated fields

        trajectory step_index v_cmd w_cmd h_hat q_hat[n] r_e_hat[2*feet] r_z_hat[feet]
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ds.header
    head = {
        "format_version": header.format_version,
        "robot": header.robot,
        "dt": header.dt,
        "kp": list(header.kp),
        "kd": list(header.kd),
        "checkpoint_id": header.checkpoint_id,
        "n_joints": header.n_joints,
        "n_feet": header.n_feet,
        "settle_steps": header.settle_steps,
        "trajectories": [
            {"v_cmd": t.command.v_cmd, "w_cmd": t.command.w_cmd, "frames": len(t)} for t in ds.trajectories
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(head, sort_keys=True) + "\n")
        for index, traj in enumerate(ds.trajectories):
            for frame in traj.frames:
                fields = [str(index), str(frame.step_index), _fmt(frame.v_cmd), _fmt(frame.w_cmd)]
                fields.extend(_fmt(v) for v in frame.values())
                f.write(" ".join(fields) + "\n")
    logger.info(f"Saved imitation dataset to {path}")
    return path


def _parse_frame(line: str, number: int, n: int, feet: int) -> Tuple[int, ImitationFrame]:
    fields = line.split()
    expected = 5 + n + 3 * feet
    if len(fields) != expected:
        raise DatasetError(f"expected {expected} fields, found {len(fields)}", line_number=number)
    try:
        index, step_index = int(fields[0]), int(fields[1])
        values = [float(v) for v in fields[2:]]
    except ValueError as e:
        raise DatasetError(f"malformed number ({e})", line_number=number) from e
    v_cmd, w_cmd, h_hat = values[:3]
    q_hat = np.array(values[3:3 + n])
    r_e_hat = np.array(values[3 + n:3 + n + 2 * feet]).reshape(feet, 2)
    r_z_hat = np.array(values[3 + n + 2 * feet:])
    if not (np.all(np.isfinite(values))):
        raise DatasetError("non-finite value", line_number=number)
    return index, ImitationFrame(q_hat, h_hat, r_e_hat, r_z_hat, v_cmd, w_cmd, step_index)


def load_dataset(path: Union[str, Path], expected_dt: Optional[float] = None) -> ImitationDataset:
    """
    Read a `.imit` file written by save_dataset.

    A dt different from `expected_dt` only logs a warning here; lookup rejects it.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"imitation dataset not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file", line_number=1)
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: unreadable header ({e})", line_number=1) from e
    if head.get("format_version") != FORMAT_VERSION:
        raise DatasetError(
            f"{path}: unsupported format_version {head.get('format_version')} (expected {FORMAT_VERSION})",
            line_number=1,
        )

    try:
        n, feet = int(head["n_joints"]), int(head["n_feet"])
        header = DatasetHeader(
            robot=head["robot"],
            dt=float(head["dt"]),
            kp=tuple(float(v) for v in head["kp"]),
            kd=tuple(float(v) for v in head["kd"]),
            checkpoint_id=head["checkpoint_id"],
            n_joints=n,
            n_feet=feet,
            settle_steps=int(head.get("settle_steps", 0)),
            format_version=head["format_version"],
        )
        layout = [(Command(float(t["v_cmd"]), float(t["w_cmd"])), int(t["frames"])) for t in head["trajectories"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{path}: incomplete header ({e})", line_number=1) from e

    frames: List[List[ImitationFrame]] = [[] for _ in layout]
    last_good = 1
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        index, frame = _parse_frame(line, number, n, feet)
        if not 0 <= index < len(layout):
            raise DatasetError(f"trajectory index {index} outside header range", line_number=number)
        if len(frames[index]) >= layout[index][1]:
            raise DatasetError(f"trajectory {index} has more frames than its header declares", line_number=number)
        frames[index].append(frame)
        last_good = number

    for index, (command, count) in enumerate(layout):
        if len(frames[index]) != count:
            raise DatasetError(
                f"{path}: truncated, trajectory {index} has {len(frames[index])} of {count} frames; "
                f"last good line {last_good}",
                line_number=last_good,
            )

    if expected_dt is not None and expected_dt != header.dt:
        logger.warning(f"{path}: dataset dt {header.dt} differs from run dt {expected_dt}; lookups will fail")

    trajectories = tuple(Trajectory(command=c, frames=tuple(fs)) for (c, _), fs in zip(layout, frames))
    return ImitationDataset(header=header, trajectories=trajectories)
