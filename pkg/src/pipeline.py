"""
Experiment pipeline: position-policy training, imitation recording, torque-policy
training (scratch, imitation-only, imitation + decaying priors), evaluation and
the imitation-weight sweep.

Every run writes into its own directory:

    config.json      effective run config
    manifest.jsonl   header line, one line per iteration, final line
    metrics.csv      the iteration lines as CSV
    policy.ckpt      text checkpoint
    gait_trace.csv   per-step trace of the last evaluation probe
    timing.json      wall-clock (kept out of the manifest so manifests stay reproducible)
"""
import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from src.config import settings
from src.control import DEFAULT_SCALES, ActionConfig, DecayClock, decay_factor, position_target
from src.env import REWARD_TERMS, EnvPool, EnvSettings, EpisodeTrace, LocomotionEnv
from src.exceptions import ConfigError
from src.imitation import ImitationDataset, gain_sensitivity, load_dataset, record, rmse, save_dataset
from src.ppo import (
    ActorCritic,
    PpoConfig,
    collect_rollouts,
    load_checkpoint,
    make_optimizer,
    ppo_update,
    save_checkpoint,
    seed_everything,
)
from src.robots import RobotModel, load_model
from src.task import Command, RewardWeights, TaskConfig, observation_size

logger = logging.getLogger(__name__)

RunMode = Literal["position", "torque", "imitation", "decap"]
ACTION_MODES = {"position": "position", "torque": "torque", "imitation": "torque", "decap": "decap"}
TORQUE_MODES = ("torque", "imitation", "decap")

ROW_FIELDS = (
    "iteration", "global_step", "mean_reward", "decay_factor",
    *REWARD_TERMS,
    "policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction",
    "env_faults", "episodes_ended", "eval_reward", "eval_tracking_error", "rmse",
)
SWEEP_FIELDS = ("scale", "mode", "seed", "status", "final_rmse", "mean_rmse", "final_eval_reward", "run_dir", "error")


# ------------------------------------------------------------------
# Configuration
# ------------------------------------------------------------------
class EvalConfig(BaseModel):
    """Fixed evaluation protocol used for training probes and `evaluate`"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    commands: List[float] = [0.3, 0.6, 0.9]
    episodes: int = Field(default_factory=lambda: settings.EVAL_EPISODES)
    steps: int = Field(default_factory=lambda: settings.EVAL_STEPS)
    interval: int = Field(default_factory=lambda: settings.EVAL_INTERVAL)
    final_probes: int = Field(default_factory=lambda: settings.FINAL_RMSE_PROBES)
    probe_prior: bool = True  # decap learning-curve probes apply the prior at the current decay; final metrics never do
    low_speed: float = 0.4    # commands at or below this count towards posture_deviation

    @model_validator(mode="after")
    def _check(self) -> "EvalConfig":
        if not self.commands:
            raise ValueError("eval.commands must not be empty")
        if self.episodes < 1 or self.steps < 1 or self.interval < 1 or self.final_probes < 1:
            raise ValueError("eval episodes, steps, interval and final_probes must be >= 1")
        return self


class RecordConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    commands: List[float] = [0.3, 0.5, 0.7, 0.9]
    steps: int = 500
    settle_steps: int = Field(default_factory=lambda: settings.SETTLE_STEPS)


class RunConfig(BaseModel):
    """One training run; snapshotted verbatim into the run directory"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    robot: str = "hopper"
    seed: int = 0
    mode: RunMode = "position"
    imitation: Optional[str] = None
    output_dir: Optional[str] = None
    task: TaskConfig = TaskConfig()
    rewards: RewardWeights = RewardWeights()
    action: ActionConfig = ActionConfig()
    ppo: PpoConfig = PpoConfig()
    eval: EvalConfig = EvalConfig()
    record: RecordConfig = RecordConfig()

    @model_validator(mode="before")
    @classmethod
    def _derive_action_mode(cls, data: Any) -> Any:
        if isinstance(data, dict) and "mode" in data:
            action = dict(data.get("action") or {})
            action.setdefault("mode", ACTION_MODES.get(data["mode"], data["mode"]))
            data = {**data, "action": action}
        return data

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        expected = ACTION_MODES[self.mode]
        if self.action.mode != expected:
            raise ValueError(f"mode '{self.mode}' needs action.mode '{expected}', got '{self.action.mode}'")
        if self.rewards.dt != self.task.dt:
            raise ValueError(f"rewards.dt ({self.rewards.dt}) must equal task.dt ({self.task.dt})")
        return self

    @property
    def imitation_rewards(self) -> bool:
        return self.mode in ("imitation", "decap")

    @property
    def run_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return settings.output_root / f"{self.mode}_{Path(self.robot).stem}_seed{self.seed}"

    def with_mode(self, mode: str) -> "RunConfig":
        data = self.model_dump()
        data["mode"] = mode
        data["action"].pop("mode", None)
        return build_config(data)

    def env_settings(self, model: RobotModel) -> EnvSettings:
        return EnvSettings(
            model=model,
            task=self.task,
            rewards=self.rewards,
            action=self.action,
            imitation_rewards=self.imitation_rewards,
        )

    def snapshot(self) -> str:
        return self.model_dump_json(indent=2)


def build_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid run config: {problems}") from e


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply `dotted.key=value` overrides (values parsed as JSON, else string)"""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = data
        for part in parts[:-1]:
            node = target.get(part)
            if node is None:
                node = target[part] = {}
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}': '{part}' is not a section")
            target = node
        target[parts[-1]] = _parse_value(raw)
    return data


def resolve_config_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.exists():
        return path
    for candidate in (settings.bundled_config_dir / path, settings.bundled_config_dir / f"{path}.json"):
        if candidate.exists():
            return candidate
    raise ConfigError(f"config file not found: {path}")


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        resolved = resolve_config_path(path)
        try:
            data = json.loads(resolved.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{resolved}: invalid JSON ({e})") from e
    return build_config(apply_overrides(data, overrides))


def config_diff(a: RunConfig, b: RunConfig) -> Dict[str, Tuple[Any, Any]]:
    """Dotted keys whose values differ between two configs"""
    def _flatten(node: Any, prefix: str = "") -> Dict[str, Any]:
        if isinstance(node, dict):
            flat = {}
            for key, value in node.items():
                flat.update(_flatten(value, f"{prefix}{key}."))
            return flat
        return {prefix[:-1]: node}

    left, right = _flatten(a.model_dump(mode="json")), _flatten(b.model_dump(mode="json"))
    return {
        key: (left.get(key), right.get(key))
        for key in sorted(set(left) | set(right))
        if left.get(key) != right.get(key)
    }


# ------------------------------------------------------------------
# Manifest
# ------------------------------------------------------------------
def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, f".{settings.FLOAT_DIGITS}g")
    return str(value)


def write_csv(path: Path, fields: Sequence[str], rows: Sequence[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row.get(name)) for name in fields])
    return path


class ManifestWriter:
    """Appends manifest lines and CSV rows as iterations complete"""

    def __init__(self, run_dir: Path, cfg: RunConfig, model: RobotModel):
        self.run_dir = run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(cfg.snapshot() + "\n", encoding="utf-8")
        self._jsonl = open(run_dir / "manifest.jsonl", "w", encoding="utf-8")
        self._csv_file = open(run_dir / "metrics.csv", "w", newline="", encoding="utf-8")
        self._csv = csv.writer(self._csv_file, lineterminator="\n")
        self._csv.writerow(ROW_FIELDS)
        self._line({
            "kind": "header",
            "config": cfg.model_dump(mode="json"),
            "robot": model.to_dict(),
            "steps_per_iteration": cfg.ppo.steps_per_iteration,
        })

    def _line(self, record: Dict[str, Any]) -> None:
        self._jsonl.write(json.dumps(record, sort_keys=True) + "\n")
        self._jsonl.flush()

    def row(self, row: Dict[str, Any]) -> None:
        self._line({"kind": "iteration", **row})
        self._csv.writerow([_fmt(row.get(name)) for name in ROW_FIELDS])
        self._csv_file.flush()

    def close(self, final: Dict[str, Any]) -> None:
        self._line({"kind": "final", **final})
        self._jsonl.close()
        self._csv_file.close()


@dataclass
class RunManifest:
    run_dir: Path
    config: Dict[str, Any]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    final: Dict[str, Any] = field(default_factory=dict)

    @property
    def checkpoint_path(self) -> Optional[Path]:
        name = self.final.get("checkpoint")
        return self.run_dir / name if name else None

    @property
    def checkpoint_id(self) -> Optional[str]:
        return self.final.get("checkpoint_id")

    @property
    def final_rmse(self) -> Optional[float]:
        return self.final.get("final_rmse")

    @property
    def final_eval_reward(self) -> Optional[float]:
        return self.final.get("final_eval_reward")

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> "RunManifest":
        run_dir = Path(run_dir)
        path = run_dir / "manifest.jsonl"
        if not path.exists():
            raise ConfigError(f"no manifest in {run_dir}")
        manifest = cls(run_dir=run_dir, config={})
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                record = json.loads(line)
                kind = record.pop("kind")
                if kind == "header":
                    manifest.config = record["config"]
                elif kind == "iteration":
                    manifest.rows.append(record)
                else:
                    manifest.final = record
        return manifest


# ------------------------------------------------------------------
# Evaluation
# ------------------------------------------------------------------
@dataclass
class EvalMetrics:
    episodes: int
    mean_reward: float
    breakdown: Dict[str, float]
    rmse: Optional[float]
    tracking_error: float
    fall_rate: float
    posture_deviation: Optional[float]
    mean_length: float
    trace: Optional[EpisodeTrace] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "episodes": self.episodes,
            "mean_reward": self.mean_reward,
            "breakdown": self.breakdown,
            "rmse": self.rmse,
            "tracking_error": self.tracking_error,
            "fall_rate": self.fall_rate,
            "posture_deviation": self.posture_deviation,
            "mean_length": self.mean_length,
        }


def _check_policy_against(policy: ActorCritic, model: RobotModel) -> None:
    if policy.robot and policy.robot != model.name:
        raise ConfigError(f"policy was trained on '{policy.robot}', config uses '{model.name}'")
    if policy.obs_dim != observation_size(model.n_joints) or policy.act_dim != model.n_joints:
        raise ConfigError(
            f"policy shape ({policy.obs_dim} -> {policy.act_dim}) does not fit '{model.name}' "
            f"({observation_size(model.n_joints)} -> {model.n_joints})"
        )


def evaluate(
    policy: ActorCritic,
    cfg: RunConfig,
    episodes: int,
    dataset: Optional[ImitationDataset] = None,
    assist_policy: Optional[ActorCritic] = None,
    decay_step: Optional[int] = None,
    model: Optional[RobotModel] = None,
) -> EvalMetrics:
    """
    Deterministic (mean action) evaluation episodes.

    Episode i runs the command cfg.eval.commands[i % len(commands)] for at most
    cfg.eval.steps steps. A decap policy is evaluated without its prior unless
    `decay_step` is given. With `assist_policy` the torque policy runs on top of
    a low-gain PD tracking the position policy's target.
    """
    if episodes <= 0:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    model = model or load_model(cfg.robot)
    _check_policy_against(policy, model)

    action = cfg.action
    if action.mode == "decap" and decay_step is None:
        action = action.with_mode("torque")
    if assist_policy is not None:
        _check_policy_against(assist_policy, model)
        if assist_policy.mode and assist_policy.mode != "position":
            raise ConfigError(f"assist policy must be a position policy, got '{assist_policy.mode}'")
        action = action.with_mode("assisted")
    task = cfg.task.model_copy(update={"max_steps": cfg.eval.steps, "resample_interval": 0})
    env = EnvSettings(
        model=model,
        task=task,
        rewards=cfg.rewards,
        action=action,
        imitation_rewards=cfg.imitation_rewards and dataset is not None,
    )

    traces: List[EpisodeTrace] = []
    for episode in range(episodes):
        command = Command(float(cfg.eval.commands[episode % len(cfg.eval.commands)]), 0.0)
        sim = LocomotionEnv(env, dataset=dataset, seed=cfg.seed, fixed_command=command)
        obs = sim.reset(command)
        trace = EpisodeTrace(command=command)
        for _ in range(cfg.eval.steps):
            target = None
            if assist_policy is not None:
                target = position_target(assist_policy.act(obs), model, DEFAULT_SCALES["position"])
            result = sim.step(policy.act(obs), t=decay_step or 0, pos_policy_target=target)
            trace.append(result)
            if result.done:
                trace.reason = result.reason
                break
            obs = result.obs
        traces.append(trace)

    breakdown = {
        name: float(np.mean([sum(b[name] for b in t.breakdowns) for t in traces])) for name in REWARD_TERMS
    }
    errors = np.concatenate([np.abs(t.command.v_cmd - np.asarray(t.vx)) for t in traces])
    slow = [t for t in traces if t.command.v_cmd <= cfg.eval.low_speed]
    posture = None
    if slow:
        posture = float(np.mean(np.concatenate([np.abs(np.stack(t.q) - model.q_nom).ravel() for t in slow])))
    tracked_rmse = None
    if dataset is not None:
        tracked_rmse = rmse(
            np.concatenate([np.stack(t.q) for t in traces]),
            np.concatenate([np.stack(t.q_hat) for t in traces]),
        )
    return EvalMetrics(
        episodes=episodes,
        mean_reward=float(np.mean([sum(t.rewards) for t in traces])),
        breakdown=breakdown,
        rmse=tracked_rmse,
        tracking_error=float(np.mean(errors)),
        fall_rate=float(np.mean([t.fell for t in traces])),
        posture_deviation=posture,
        mean_length=float(np.mean([t.length for t in traces])),
        trace=traces[-1],
    )


def write_gait_trace(trace: EpisodeTrace, path: Path, n_joints: int) -> Path:
    fields = (
        ["step", "v_cmd", "vx"]
        + [f"q_{j}" for j in range(n_joints)]
        + [f"q_hat_{j}" for j in range(n_joints)]
        + [f"tau_{j}" for j in range(n_joints)]
    )
    rows = []
    for step in range(trace.length):
        row: Dict[str, Any] = {"step": step, "v_cmd": trace.command.v_cmd, "vx": trace.vx[step]}
        q_hat = trace.q_hat[step]
        for j in range(n_joints):
            row[f"q_{j}"] = float(trace.q[step][j])
            row[f"q_hat_{j}"] = None if q_hat is None else float(q_hat[j])
            row[f"tau_{j}"] = float(trace.torques[step][j])
        rows.append(row)
    return write_csv(path, fields, rows)


# ------------------------------------------------------------------
# Training
# ------------------------------------------------------------------
def _resolve_dataset(cfg: RunConfig, dataset: Optional[ImitationDataset]) -> Optional[ImitationDataset]:
    if dataset is None and cfg.imitation:
        dataset = load_dataset(cfg.imitation, expected_dt=cfg.task.dt)
    if cfg.mode in ("imitation", "decap") and dataset is None:
        raise ConfigError(f"mode '{cfg.mode}' requires field 'imitation' (path to an imitation dataset)")
    return dataset


def find_stage1_manifest(checkpoint_id: str, root: Optional[Path] = None) -> Optional[Path]:
    """Run directory of the position run that produced checkpoint `checkpoint_id`"""
    root = root or settings.output_root
    if not checkpoint_id or not root.exists():
        return None
    for path in sorted(root.rglob("manifest.jsonl")):
        try:
            manifest = RunManifest.load(path.parent)
        except (ValueError, KeyError):
            continue
        if manifest.checkpoint_id == checkpoint_id and manifest.config.get("mode") == "position":
            return path.parent
    return None


def _check_provenance(dataset: ImitationDataset, cfg: RunConfig) -> None:
    header = dataset.header
    if header.robot != Path(cfg.robot).stem and header.robot != cfg.robot:
        logger.warning(f"Imitation data was recorded on '{header.robot}', run uses '{cfg.robot}'")
    roots = [settings.output_root]
    if cfg.imitation:
        roots.append(Path(cfg.imitation).resolve().parent.parent)
    if not any(find_stage1_manifest(header.checkpoint_id, root) for root in roots):
        logger.warning(
            f"Imitation dataset checkpoint '{header.checkpoint_id}' does not match any position-run manifest"
        )


def evaluation_iterations(cfg: RunConfig) -> List[int]:
    """Iterations that end with an evaluation probe: every eval.interval-th and the last"""
    last = cfg.ppo.iterations - 1
    return [i for i in range(cfg.ppo.iterations) if (i + 1) % cfg.eval.interval == 0 or i == last]


def final_decay_factor(cfg: RunConfig) -> float:
    """Prior weight during the last iteration of a global-clock run (one clock tick per synchronized step)"""
    return decay_factor(cfg.action.schedule, (cfg.ppo.iterations - 1) * cfg.ppo.steps_per_iteration)


def _train(cfg: RunConfig, dataset: Optional[ImitationDataset], show_progress: bool) -> Tuple[ActorCritic, RunManifest]:
    started = time.perf_counter()
    model = load_model(cfg.robot)
    env = cfg.env_settings(model)
    generator = seed_everything(cfg.seed)
    policy = ActorCritic.from_config(observation_size(model.n_joints), model.n_joints, cfg.ppo, mode=cfg.mode, robot=model.name)
    optimizer = make_optimizer(policy, cfg.ppo)
    clock = DecayClock()
    pool = EnvPool.build(env, cfg.ppo.n_envs, cfg.seed, dataset=dataset, clock=clock, workers=settings.ROLLOUT_WORKERS)
    pool.reset()

    run_dir = cfg.run_dir
    writer = ManifestWriter(run_dir, cfg, model)
    manifest = RunManifest(run_dir=run_dir, config=cfg.model_dump(mode="json"))
    probe_rmse: List[float] = []
    probe_reward: List[float] = []
    is_decap = cfg.action.mode == "decap"
    prior_probes = is_decap and cfg.eval.probe_prior
    # final_rmse / final_eval_reward always come from prior-free probes
    final_probes = set(evaluation_iterations(cfg)[-cfg.eval.final_probes:])
    logger.info(f"Training {cfg.mode} policy on '{model.name}' -> {run_dir}")

    try:
        iterator = tqdm(range(cfg.ppo.iterations), desc=f"{cfg.mode} PPO", disable=not show_progress)
        for iteration in iterator:
            step_at_start = clock.value
            batch = collect_rollouts(pool, policy, cfg.ppo, generator)
            batch.compute_advantages(cfg.ppo)
            stats = ppo_update(policy, optimizer, batch, cfg.ppo, generator)
            terms = batch.breakdown_means()

            row: Dict[str, Any] = {
                "iteration": iteration,
                "global_step": step_at_start,
                "mean_reward": float(batch.rewards.mean().item()),
                "decay_factor": decay_factor(cfg.action.schedule, step_at_start) if is_decap else None,
                **{name: terms.get(name, 0.0) for name in REWARD_TERMS},
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "approx_kl": stats.approx_kl,
                "clip_fraction": stats.clip_fraction,
                "env_faults": batch.env_faults,
                "episodes_ended": sum(batch.terminations.values()),
                "eval_reward": None,
                "eval_tracking_error": None,
                "rmse": None,
            }

            last = iteration == cfg.ppo.iterations - 1
            if (iteration + 1) % cfg.eval.interval == 0 or last:
                probe = evaluate(
                    policy, cfg, cfg.eval.episodes,
                    dataset=dataset,
                    decay_step=clock.value if prior_probes else None,
                    model=model,
                )
                row["eval_reward"] = probe.mean_reward
                row["eval_tracking_error"] = probe.tracking_error
                row["rmse"] = probe.rmse
                if iteration in final_probes:
                    bare = evaluate(policy, cfg, cfg.eval.episodes, dataset=dataset, model=model) if prior_probes else probe
                    probe_reward.append(bare.mean_reward)
                    if bare.rmse is not None:
                        probe_rmse.append(bare.rmse)
                    if last and bare.trace is not None:
                        write_gait_trace(bare.trace, run_dir / "gait_trace.csv", model.n_joints)

            writer.row(row)
            manifest.rows.append(row)
            iterator.set_postfix(reward=f"{row['mean_reward']:.4f}")
    except Exception as e:
        logger.exception(f"Training aborted at iteration {len(manifest.rows)}: {e}")
        manifest.final = {"status": "aborted", "error": str(e), "iterations": len(manifest.rows)}
        writer.close(manifest.final)
        raise
    finally:
        pool.close()

    checkpoint = run_dir / "policy.ckpt"
    ckpt_id = save_checkpoint(policy, checkpoint)
    recent = probe_rmse[-cfg.eval.final_probes:]
    manifest.final = {
        "status": "completed",
        "iterations": len(manifest.rows),
        "global_steps": clock.value,
        "checkpoint": checkpoint.name,
        "checkpoint_id": ckpt_id,
        "final_rmse": float(np.mean(recent)) if recent else None,
        "final_eval_reward": probe_reward[-1] if probe_reward else None,
    }
    writer.close(manifest.final)
    (run_dir / "timing.json").write_text(
        json.dumps({"wall_clock_seconds": time.perf_counter() - started}) + "\n", encoding="utf-8"
    )
    logger.info(f"Finished {cfg.mode} run: checkpoint {ckpt_id}, final RMSE {manifest.final['final_rmse']}")
    return policy, manifest


def train_position(cfg: RunConfig, show_progress: bool = True) -> Tuple[ActorCritic, RunManifest]:
    """Stage 1: position-space policy trained on shaping rewards only"""
    if cfg.mode != "position":
        raise ConfigError(f"train_position needs mode 'position', got '{cfg.mode}' (use train_torque)")
    return _train(cfg, dataset=None, show_progress=show_progress)


def train_torque(
    cfg: RunConfig,
    dataset: Optional[ImitationDataset] = None,
    show_progress: bool = True,
) -> Tuple[ActorCritic, RunManifest]:
    """
    Stage 2: torque-space policy.

    torque     scratch, shaping rewards only; a dataset (if any) is used for RMSE probes
    imitation  shaping + imitation rewards
    decap      shaping + imitation rewards + decaying PD prior on the reference angles
    """
    if cfg.mode not in TORQUE_MODES:
        raise ConfigError(f"train_torque needs a mode in {TORQUE_MODES}, got '{cfg.mode}'")
    dataset = _resolve_dataset(cfg, dataset)
    if dataset is not None:
        _check_provenance(dataset, cfg)
    if cfg.mode == "decap" and cfg.action.decay_clock == "global" and final_decay_factor(cfg) >= 0.01:
        logger.warning(
            f"Action prior still weighs {final_decay_factor(cfg):.3g} in the last iteration; "
            f"raise ppo.iterations or ppo.steps_per_iteration for it to vanish"
        )
    return _train(cfg, dataset=dataset, show_progress=show_progress)


def record_imitation(
    cfg: RunConfig,
    policy_path: Union[str, Path],
    out: Union[str, Path],
    show_progress: bool = True,
) -> ImitationDataset:
    """Roll out a trained position policy and save the tracked states"""
    policy, ckpt_id = load_checkpoint(policy_path)
    model = load_model(cfg.robot)
    _check_policy_against(policy, model)
    env = cfg.with_mode("position").env_settings(model)
    commands = [Command(float(v), 0.0) for v in cfg.record.commands]
    dataset = record(
        policy, commands, cfg.record.steps, env,
        settle_steps=cfg.record.settle_steps, seed=cfg.seed,
        checkpoint_id=ckpt_id, show_progress=show_progress,
    )
    save_dataset(dataset, out)
    return dataset


def compare_gains(cfg: RunConfig, policy_path: Union[str, Path], kp_factor: float = 0.5):
    """Desired vs tracked angle sensitivity of a position policy to its Kp"""
    policy, _ = load_checkpoint(policy_path)
    model = load_model(cfg.robot)
    env = cfg.with_mode("position").env_settings(model)
    gains = cfg.action.gains
    reduced = gains.model_copy(update={"kp": gains.scaled(kp_factor).kp})
    return gain_sensitivity(
        policy, env, gains, reduced,
        Command(float(cfg.record.commands[0]), 0.0),
        cfg.record.steps, settle_steps=cfg.record.settle_steps,
    )


# ------------------------------------------------------------------
# Sweep
# ------------------------------------------------------------------
def sweep_cell_config(base: RunConfig, scale: float, mode: str, seed: int, sweep_dir: Path) -> RunConfig:
    """Base config with the three imitation weights scaled; only weights, seed, mode and output change"""
    data = base.model_dump()
    data["mode"] = mode
    data["action"].pop("mode", None)
    data["seed"] = int(seed)
    data["rewards"] = base.rewards.scaled_imitation(scale).model_dump()
    data["output_dir"] = str(sweep_dir / f"{mode}_x{scale:g}_seed{seed}")
    return build_config(data)


def _sweep_cell(payload: Dict[str, Any]) -> Dict[str, Any]:
    row = {"scale": payload["scale"], "mode": payload["mode"], "seed": payload["seed"], "run_dir": payload["config"]["output_dir"]}
    try:
        cfg = build_config(payload["config"])
        _, manifest = train_torque(cfg, show_progress=False)
        row.update(status="completed", final_rmse=manifest.final_rmse, final_eval_reward=manifest.final_eval_reward)
    except Exception as e:
        logger.exception(f"Sweep cell {row} failed: {e}")
        row.update(status="failed", error=f"{type(e).__name__}: {e}")
    return row


def sweep(
    base: RunConfig,
    scales: Sequence[float] = (0.5, 1.0, 5.0, 10.0),
    modes: Sequence[str] = ("imitation", "decap"),
    seeds: Sequence[int] = (0, 1, 2),
    jobs: int = 1,
    sweep_dir: Optional[Union[str, Path]] = None,
) -> List[Dict[str, Any]]:
    """
    Train one torque run per (scale, mode, seed) and tabulate final RMSE.

    Failed cells are recorded with status 'failed' and the sweep continues.
    Writes sweep.jsonl and sweep.csv into `sweep_dir`.
    """
    if not base.imitation:
        raise ConfigError("sweep requires field 'imitation' (path to an imitation dataset)")
    for mode in modes:
        if mode not in ("imitation", "decap"):
            raise ConfigError(f"sweep modes must be 'imitation' or 'decap', got '{mode}'")
    sweep_dir = Path(sweep_dir) if sweep_dir else settings.output_root / f"sweep_{Path(base.robot).stem}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "config.json").write_text(base.snapshot() + "\n", encoding="utf-8")

    payloads = []
    for scale in scales:
        for mode in modes:
            for seed in seeds:
                cfg = sweep_cell_config(base, float(scale), mode, int(seed), sweep_dir)
                payloads.append({"scale": float(scale), "mode": mode, "seed": int(seed), "config": cfg.model_dump()})
    logger.info(f"Sweep: {len(payloads)} cells, {jobs} job(s) -> {sweep_dir}")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            rows = list(executor.map(_sweep_cell, payloads))
    else:
        rows = [_sweep_cell(p) for p in tqdm(payloads, desc="Sweep")]

    rows.sort(key=lambda r: (r["scale"], r["mode"], r["seed"]))
    for row in rows:
        peers = [
            r["final_rmse"] for r in rows
            if r["scale"] == row["scale"] and r["mode"] == row["mode"] and r.get("final_rmse") is not None
        ]
        row["mean_rmse"] = float(np.mean(peers)) if peers else None
        for name in SWEEP_FIELDS:
            row.setdefault(name, None)

    with open(sweep_dir / "sweep.jsonl", "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps({name: row[name] for name in SWEEP_FIELDS}) + "\n")
    write_csv(sweep_dir / "sweep.csv", SWEEP_FIELDS, rows)
    return rows


def read_sweep_table(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Rows of a sweep directory (or its sweep.jsonl)"""
    path = Path(path)
    if path.is_dir():
        path = path / "sweep.jsonl"
    if not path.exists():
        raise ConfigError(f"no sweep table at {path}")
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# ------------------------------------------------------------------
# Export
# ------------------------------------------------------------------
EXPORTS = ("learning-curve", "rmse-table", "reward-breakdown", "gait-trace")


def export(run_dir: Union[str, Path], what: str, out: Optional[Union[str, Path]] = None) -> Path:
    """
    Plot-ready CSV from a run (or sweep) directory.

    learning-curve    iteration, mean_reward, decay_factor
    rmse-table        one row per sweep cell (SWEEP_FIELDS)
    reward-breakdown  iteration, mean_reward and one column per reward term
    gait-trace        step, v_cmd, vx, q_j, q_hat_j, tau_j of the last evaluation probe
    """
    run_dir = Path(run_dir)
    if what not in EXPORTS:
        raise ConfigError(f"unknown export '{what}', expected one of {EXPORTS}")
    out = Path(out) if out else run_dir / f"{what}.csv"

    if what == "rmse-table":
        return write_csv(out, SWEEP_FIELDS, read_sweep_table(run_dir))
    if what == "gait-trace":
        source = run_dir / "gait_trace.csv"
        if not source.exists():
            raise ConfigError(f"no gait trace in {run_dir}")
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.resolve() != source.resolve():
            out.write_bytes(source.read_bytes())
        return out

    manifest = RunManifest.load(run_dir)
    if what == "learning-curve":
        return write_csv(out, ("iteration", "mean_reward", "decay_factor"), manifest.rows)
    return write_csv(out, ("iteration", "mean_reward", *REWARD_TERMS), manifest.rows)
