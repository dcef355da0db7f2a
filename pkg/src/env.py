"""
Velocity-tracking locomotion environment and a synchronized pool of them.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np

from src import dynamics
from src.control import ActionConfig, DecayClock, apply_action, position_target
from src.dynamics import ContactReport, SimState
from src.exceptions import ConfigError, SimulationError
from src.robots import RobotModel
from src.task import (
    IMITATION_TERMS,
    SHAPING_TERMS,
    Command,
    RewardWeights,
    TaskConfig,
    imitation_reward,
    observation_size,
    observe,
    sample_command,
    shaping_reward,
    terminate,
)

if TYPE_CHECKING:
    from src.imitation import ImitationDataset, ImitationFrame

logger = logging.getLogger(__name__)

REWARD_TERMS = SHAPING_TERMS + IMITATION_TERMS


@dataclass(frozen=True)
class EnvSettings:
    """Everything needed to build an environment for one run"""
    model: RobotModel
    task: TaskConfig
    rewards: RewardWeights
    action: ActionConfig
    imitation_rewards: bool = False

    def __post_init__(self):
        if self.rewards.dt != self.task.dt:
            raise ConfigError(f"rewards.dt ({self.rewards.dt}) must equal task.dt ({self.task.dt})")


@dataclass
class StepResult:
    obs: np.ndarray                 # observation after the step (first of the next episode when done)
    reward: float
    done: bool
    reason: str
    breakdown: Dict[str, float]
    state: SimState                 # post-step state, before any auto-reset
    torques: np.ndarray
    command: Command
    ref: Optional["ImitationFrame"] = None
    pos_target: Optional[np.ndarray] = None
    contact: Optional[ContactReport] = None
    fault: bool = False


class LocomotionEnv:
    """
    One planar robot tracking a forward-velocity command.

    The environment owns its command sampler and imitation cursor; the action
    adapter receives the decay step from the caller so a pool can share one
    global clock.
    """

    def __init__(
        self,
        env: EnvSettings,
        dataset: Optional["ImitationDataset"] = None,
        seed: int = 0,
        fixed_command: Optional[Command] = None,
        initial_height: Optional[float] = None,
    ):
        self.env = env
        self.model = env.model
        self.dataset = dataset
        self.fixed_command = fixed_command
        self.initial_height = initial_height
        self.rng = np.random.default_rng(seed)

        if env.action.mode == "decap" and dataset is None:
            raise ConfigError("decap mode needs an imitation dataset")
        if env.imitation_rewards and dataset is None:
            raise ConfigError("imitation rewards need an imitation dataset")
        if dataset is not None:
            self._check_dataset(dataset)

        self.state: SimState = dynamics.initial_state(self.model, initial_height)
        self.command = Command(0.0, 0.0)
        self.a_prev = np.zeros(self.model.n_joints)
        self.ref_step = 0
        self.episode_return = 0.0

    def _check_dataset(self, dataset: "ImitationDataset") -> None:
        header = dataset.header
        if header.n_joints != self.model.n_joints or header.n_feet != self.model.n_feet:
            raise ConfigError(
                f"imitation dataset for {header.n_joints} joints / {header.n_feet} feet "
                f"cannot drive '{self.model.name}' ({self.model.n_joints} joints / {self.model.n_feet} feet)"
            )

    @property
    def obs_dim(self) -> int:
        return observation_size(self.model.n_joints)

    @property
    def act_dim(self) -> int:
        return self.model.n_joints

    def reset(self, command: Optional[Command] = None) -> np.ndarray:
        self.state = dynamics.initial_state(self.model, self.initial_height)
        if command is not None:
            self.command = command
        elif self.fixed_command is not None:
            self.command = self.fixed_command
        else:
            self.command = sample_command(self.rng, self.env.task.commands)
        self.a_prev = np.zeros(self.model.n_joints)
        self.ref_step = 0
        self.episode_return = 0.0
        return self.observe()

    def observe(self) -> np.ndarray:
        obs = observe(self.state, self.command, self.a_prev)
        return obs.as_array(self.env.task.obs_scales)

    def reference(self) -> Optional["ImitationFrame"]:
        if self.dataset is None:
            return None
        return self.dataset.lookup(self.command, self.ref_step, dt=self.env.task.dt)

    def step(self, raw_action, t: int = 0, pos_policy_target=None) -> StepResult:
        """
        Apply one raw action.

        Args:
            raw_action: unscaled policy output
            t: global decay step (ignored when the action config uses the episode clock)
            pos_policy_target: position policy target angles (assisted mode)
        """
        raw = np.array(raw_action, dtype=float)
        action = self.env.action
        ref = self.reference()
        decay_step = t if action.decay_clock == "global" else self.state.time_step
        target = position_target(raw, self.model, action.scale) if action.mode == "position" else None

        torques = apply_action(raw, self.state, ref, pos_policy_target, action, decay_step, self.model)
        prev = self.state
        try:
            curr, contact = dynamics.step(prev, torques, self.model, self.env.task.dt)
        except SimulationError as e:
            logger.warning(f"Environment fault, resetting: {e}")
            command = self.command
            obs = self.reset()
            return StepResult(
                obs=obs, reward=0.0, done=True, reason="fault",
                breakdown={name: 0.0 for name in REWARD_TERMS},
                state=prev, torques=torques, command=command, ref=ref,
                pos_target=target, fault=True,
            )

        reward, breakdown = shaping_reward(prev, curr, curr.tau, contact, self.command, self.a_prev, raw, self.env.rewards)
        if self.env.imitation_rewards:
            fk = dynamics.forward_kinematics(curr.q, curr.base_pos, self.model)
            imitation, terms = imitation_reward(curr, ref, fk, self.env.rewards)
            reward += imitation
        else:
            terms = {name: 0.0 for name in IMITATION_TERMS}
        breakdown.update(terms)

        command = self.command
        self.state = curr
        self.a_prev = raw
        self.ref_step += 1
        self.episode_return += reward

        interval = self.env.task.resample_interval
        if interval and self.fixed_command is None and curr.time_step % interval == 0:
            self.command = sample_command(self.rng, self.env.task.commands)
            self.ref_step = 0

        done, reason = terminate(curr, contact, self.env.task)
        obs = self.reset() if done else self.observe()
        return StepResult(
            obs=obs, reward=reward, done=done, reason=reason, breakdown=breakdown,
            state=curr, torques=curr.tau.copy(), command=command, ref=ref,
            pos_target=target, contact=contact,
        )


class EnvPool:
    """
    Environments stepped in lock-step. The shared DecayClock advances once per
    synchronized step, after every environment has stepped.
    """

    def __init__(self, envs: List[LocomotionEnv], clock: Optional[DecayClock] = None, workers: int = 1):
        if not envs:
            raise ConfigError("an environment pool needs at least one environment")
        self.envs = envs
        self.clock = clock or DecayClock()
        self.workers = max(1, int(workers))
        self._executor = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        self.observations = np.stack([env.observe() for env in envs])

    @classmethod
    def build(
        cls,
        env: EnvSettings,
        n_envs: int,
        seed: int,
        dataset: Optional["ImitationDataset"] = None,
        clock: Optional[DecayClock] = None,
        workers: int = 1,
    ) -> "EnvPool":
        """n_envs environments with independent command streams derived from `seed`"""
        seeds = np.random.SeedSequence(seed).spawn(n_envs)
        envs = [LocomotionEnv(env, dataset=dataset, seed=s) for s in seeds]
        return cls(envs, clock=clock, workers=workers)

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def reset(self) -> np.ndarray:
        self.observations = np.stack([env.reset() for env in self.envs])
        return self.observations

    def step(self, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[StepResult]]:
        actions = np.asarray(actions, dtype=float)
        if actions.shape[0] != self.n_envs:
            raise ValueError(f"got {actions.shape[0]} actions for {self.n_envs} environments")

        t = self.clock.value
        if self._executor is None:
            results = [env.step(a, t) for env, a in zip(self.envs, actions)]
        else:
            results = list(self._executor.map(lambda pair: pair[0].step(pair[1], t), zip(self.envs, actions)))
        self.clock.tick()

        self.observations = np.stack([r.obs for r in results])
        rewards = np.array([r.reward for r in results])
        dones = np.array([r.done for r in results], dtype=float)
        return self.observations, rewards, dones, results

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None


@dataclass
class EpisodeTrace:
    """Per-step record of a single deterministic episode"""
    command: Command
    q: List[np.ndarray] = field(default_factory=list)
    q_hat: List[Optional[np.ndarray]] = field(default_factory=list)
    q_des: List[Optional[np.ndarray]] = field(default_factory=list)
    torques: List[np.ndarray] = field(default_factory=list)
    vx: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    breakdowns: List[Dict[str, float]] = field(default_factory=list)
    reason: str = ""

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def fell(self) -> bool:
        return self.reason in ("base_contact", "orientation", "fault")

    def append(self, result: StepResult) -> None:
        self.q.append(result.state.q.copy())
        self.q_hat.append(None if result.ref is None else result.ref.q_hat.copy())
        self.q_des.append(None if result.pos_target is None else result.pos_target.copy())
        self.torques.append(result.torques.copy())
        self.vx.append(float(result.state.base_vel[0]))
        self.rewards.append(result.reward)
        self.breakdowns.append(result.breakdown)
