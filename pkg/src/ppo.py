"""
PPO-Clip with generalized advantage estimation and a Gaussian MLP actor-critic.

Networks run in float64 on the CPU; autograd supplies the exact gradients and
torch.optim.Adam the update.
"""
import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, model_validator
from torch.distributions import Normal

from src.config import settings
from src.exceptions import ConfigError, TrainingError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


# ------------------------------------------------------------------
# Configuration
# ------------------------------------------------------------------
class PpoConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 1e-3
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    n_envs: int = 64
    steps_per_iteration: int = 160  # x 300 iterations = 48,000 decay steps
    iterations: int = 300

    actor_hidden: List[int] = [64, 64]
    critic_hidden: List[int] = [64, 64]
    activation: Literal["tanh", "elu"] = "tanh"
    init_log_std: Optional[float] = None  # None: ln(1.0) for torque modes, ln(0.5) for position

    @model_validator(mode="after")
    def _check(self) -> "PpoConfig":
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if self.n_envs < 1 or self.steps_per_iteration < 1 or self.iterations < 1:
            raise ValueError("n_envs, steps_per_iteration and iterations must be >= 1")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if any(h < 1 for h in self.actor_hidden + self.critic_hidden):
            raise ValueError("hidden layer sizes must be >= 1")
        return self

    def log_std_for(self, mode: str) -> float:
        if self.init_log_std is not None:
            return self.init_log_std
        return math.log(0.5) if mode == "position" else math.log(1.0)


def seed_everything(seed: int) -> torch.Generator:
    """Seed torch globally and return a dedicated generator for sampling"""
    torch.manual_seed(seed)
    torch.set_num_threads(max(1, settings.NUM_THREADS))
    torch.use_deterministic_algorithms(True)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


# ------------------------------------------------------------------
# Actor-critic
# ------------------------------------------------------------------
_ACTIVATIONS = {"tanh": nn.Tanh, "elu": nn.ELU}


def _mlp(sizes: List[int], activation: str) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(_ACTIVATIONS[activation]())
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """
    Gaussian policy with a state-independent learned log-std and a separate critic.

    `meta` records what the networks were trained for (robot, action mode) so
    checkpoints can be checked against the model they are evaluated on.
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        actor_hidden: List[int] = (64, 64),
        critic_hidden: List[int] = (64, 64),
        activation: str = "tanh",
        init_log_std: float = 0.0,
        meta: Optional[Dict[str, str]] = None,
    ):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation '{activation}'")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.actor_hidden = list(actor_hidden)
        self.critic_hidden = list(critic_hidden)
        self.activation = activation
        self.meta = dict(meta or {})

        self.actor = _mlp([obs_dim, *self.actor_hidden, act_dim], activation)
        self.critic = _mlp([obs_dim, *self.critic_hidden, 1], activation)
        self.log_std = nn.Parameter(torch.full((act_dim,), float(init_log_std)))

        # Small initial actions
        with torch.no_grad():
            self.actor[-1].weight.mul_(0.01)
            self.actor[-1].bias.zero_()
        self.to(DTYPE)

    @classmethod
    def from_config(cls, obs_dim: int, act_dim: int, cfg: PpoConfig, mode: str, robot: str) -> "ActorCritic":
        return cls(
            obs_dim=obs_dim,
            act_dim=act_dim,
            actor_hidden=cfg.actor_hidden,
            critic_hidden=cfg.critic_hidden,
            activation=cfg.activation,
            init_log_std=cfg.log_std_for(mode),
            meta={"robot": robot, "mode": mode},
        )

    @property
    def mode(self) -> str:
        return self.meta.get("mode", "")

    @property
    def robot(self) -> str:
        return self.meta.get("robot", "")

    def forward(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mean = self.actor(obs)
        value = self.critic(obs).squeeze(-1)
        return mean, self.log_std.expand_as(mean), value

    def distribution(self, obs: torch.Tensor) -> Tuple[Normal, torch.Tensor]:
        mean, log_std, value = self(obs)
        return Normal(mean, log_std.exp()), value

    def act(self, obs: np.ndarray, deterministic: bool = True, generator: Optional[torch.Generator] = None) -> np.ndarray:
        """Action for a single observation (or a batch) as numpy"""
        with torch.no_grad():
            mean, log_std, _ = self(torch.as_tensor(obs, dtype=DTYPE))
            if deterministic:
                return mean.numpy().copy()
            noise = torch.randn(mean.shape, generator=generator, dtype=DTYPE)
            return (mean + log_std.exp() * noise).numpy()


@dataclass
class NetOutput:
    mean: torch.Tensor
    log_std: torch.Tensor
    value: torch.Tensor
    loss: Optional[torch.Tensor] = None
    grads: Optional[Dict[str, torch.Tensor]] = None


def net_eval(
    params: ActorCritic,
    obs,
    loss_fn: Optional[Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]] = None,
) -> NetOutput:
    """
    Forward pass and, when `loss_fn` is given, gradients of the scalar
    loss_fn(mean, log_std, value) with respect to every parameter.
    """
    obs = torch.as_tensor(obs, dtype=DTYPE)
    if obs.shape[-1] != params.obs_dim:
        raise ValueError(f"observation has {obs.shape[-1]} entries, network expects {params.obs_dim}")

    if loss_fn is None:
        with torch.no_grad():
            mean, log_std, value = params(obs)
        return NetOutput(mean=mean, log_std=log_std, value=value)

    mean, log_std, value = params(obs)
    loss = loss_fn(mean, log_std, value)
    names, tensors = zip(*params.named_parameters())
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = {
        name: (torch.zeros_like(tensor) if grad is None else grad)
        for name, tensor, grad in zip(names, tensors, grads)
    }
    return NetOutput(mean=mean.detach(), log_std=log_std.detach(), value=value.detach(), loss=loss.detach(), grads=grads)


# ------------------------------------------------------------------
# Advantage estimation
# ------------------------------------------------------------------
def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value,
    gamma: float,
    lam: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation along axis 0.

    dones[t] marks that the episode ended after step t, so nothing is
    bootstrapped across it.

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError(f"misaligned inputs: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")

    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=float)
    last_gae = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    for t in reversed(range(rewards.shape[0])):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last_gae = delta + gamma * lam * nonterminal * last_gae
        advantages[t] = last_gae
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: torch.Tensor) -> torch.Tensor:
    """Zero mean, unit (population) standard deviation over the whole batch"""
    centred = advantages - advantages.mean()
    std = centred.pow(2).mean().sqrt()
    return centred / (std + 1e-12)


# ------------------------------------------------------------------
# Rollouts
# ------------------------------------------------------------------
@dataclass
class RolloutBatch:
    """Transitions indexed by (step, env)"""
    observations: torch.Tensor
    actions: torch.Tensor
    log_probs: torch.Tensor
    rewards: torch.Tensor
    values: torch.Tensor
    dones: torch.Tensor
    bootstrap_values: torch.Tensor
    advantages: Optional[torch.Tensor] = None
    returns: Optional[torch.Tensor] = None
    breakdown_sums: Dict[str, float] = field(default_factory=dict)
    env_faults: int = 0
    terminations: Dict[str, int] = field(default_factory=dict)

    @property
    def n_transitions(self) -> int:
        return int(self.rewards.numel())

    def compute_advantages(self, cfg: PpoConfig, normalize: bool = True) -> "RolloutBatch":
        adv, ret = gae(
            self.rewards.numpy(), self.values.numpy(), self.dones.numpy(),
            self.bootstrap_values.numpy(), cfg.gamma, cfg.lam,
        )
        self.returns = torch.as_tensor(ret, dtype=DTYPE)
        adv = torch.as_tensor(adv, dtype=DTYPE)
        self.advantages = normalize_advantages(adv) if normalize else adv
        return self

    def breakdown_means(self) -> Dict[str, float]:
        n = max(self.n_transitions, 1)
        return {name: total / n for name, total in self.breakdown_sums.items()}


def collect_rollouts(
    pool,
    params: ActorCritic,
    cfg: PpoConfig,
    generator: Optional[torch.Generator] = None,
    deterministic: bool = False,
) -> RolloutBatch:
    """
    Step every environment of `pool` for cfg.steps_per_iteration synchronized steps.

    Raw (unscaled) actions are stored; the pool feeds them back as a_prev.
    """
    n_steps, n_envs = cfg.steps_per_iteration, pool.n_envs
    obs_buf = torch.zeros((n_steps, n_envs, params.obs_dim), dtype=DTYPE)
    act_buf = torch.zeros((n_steps, n_envs, params.act_dim), dtype=DTYPE)
    logp_buf = torch.zeros((n_steps, n_envs), dtype=DTYPE)
    rew_buf = torch.zeros((n_steps, n_envs), dtype=DTYPE)
    val_buf = torch.zeros((n_steps, n_envs), dtype=DTYPE)
    done_buf = torch.zeros((n_steps, n_envs), dtype=DTYPE)
    breakdown_sums: Dict[str, float] = {}
    terminations: Dict[str, int] = {}
    faults = 0

    obs = torch.as_tensor(pool.observations, dtype=DTYPE)
    for step in range(n_steps):
        with torch.no_grad():
            dist, value = params.distribution(obs)
            if deterministic:
                action = dist.mean
            else:
                action = dist.mean + dist.stddev * torch.randn(dist.mean.shape, generator=generator, dtype=DTYPE)
            log_prob = dist.log_prob(action).sum(-1)

        next_obs, rewards, dones, results = pool.step(action.numpy())

        obs_buf[step] = obs
        act_buf[step] = action
        logp_buf[step] = log_prob
        val_buf[step] = value
        rew_buf[step] = torch.as_tensor(rewards, dtype=DTYPE)
        done_buf[step] = torch.as_tensor(dones, dtype=DTYPE)

        for result in results:
            for name, term in result.breakdown.items():
                breakdown_sums[name] = breakdown_sums.get(name, 0.0) + term
            if result.done:
                terminations[result.reason] = terminations.get(result.reason, 0) + 1
            faults += int(result.fault)

        obs = torch.as_tensor(next_obs, dtype=DTYPE)

    with torch.no_grad():
        _, _, bootstrap = params(obs)

    if faults:
        logger.warning(f"{faults} environment faults during rollout collection (envs were reset)")

    return RolloutBatch(
        observations=obs_buf,
        actions=act_buf,
        log_probs=logp_buf,
        rewards=rew_buf,
        values=val_buf,
        dones=done_buf,
        bootstrap_values=bootstrap,
        breakdown_sums=breakdown_sums,
        env_faults=faults,
        terminations=terminations,
    )


# ------------------------------------------------------------------
# Update
# ------------------------------------------------------------------
@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def ppo_losses(
    params: ActorCritic,
    obs: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    clip: float,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, Dict[str, float]]:
    """Clipped surrogate loss, value loss and mean entropy for one minibatch"""
    dist, value = params.distribution(obs)
    log_prob = dist.log_prob(actions).sum(-1)
    log_ratio = log_prob - old_log_probs
    ratio = log_ratio.exp()

    surrogate = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantages
    policy_loss = -torch.min(surrogate, clipped).mean()
    value_loss = (returns - value).pow(2).mean()
    entropy = dist.entropy().sum(-1).mean()

    with torch.no_grad():
        approx_kl = ((ratio - 1.0) - log_ratio).mean().item()
        clip_fraction = ((ratio - 1.0).abs() > clip).to(DTYPE).mean().item()
    return policy_loss, value_loss, entropy, {"approx_kl": approx_kl, "clip_fraction": clip_fraction}


def make_optimizer(params: ActorCritic, cfg: PpoConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        params.parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def minibatch_indices(n: int, minibatches: int, generator: Optional[torch.Generator] = None) -> List[torch.Tensor]:
    """Shuffled index chunks covering all `n` samples; the last chunk absorbs the remainder"""
    order = torch.randperm(n, generator=generator)
    count = min(minibatches, n)
    size = n // count
    chunks = [order[i * size:(i + 1) * size] for i in range(count - 1)]
    chunks.append(order[(count - 1) * size:])
    return chunks


def ppo_update(
    params: ActorCritic,
    optimizer: torch.optim.Optimizer,
    batch: RolloutBatch,
    cfg: PpoConfig,
    generator: Optional[torch.Generator] = None,
) -> UpdateStats:
    """
    Minibatched PPO-Clip epochs over `batch`, updating `params` in place.

    Raises:
        TrainingError: on a non-finite loss; parameters and optimizer state are restored
    """
    if batch.advantages is None or batch.returns is None:
        raise TrainingError("advantages must be computed before the update")

    obs = batch.observations.reshape(-1, params.obs_dim)
    actions = batch.actions.reshape(-1, params.act_dim)
    old_log_probs = batch.log_probs.reshape(-1)
    advantages = batch.advantages.reshape(-1)
    returns = batch.returns.reshape(-1)
    n = obs.shape[0]

    params_snapshot = copy.deepcopy(params.state_dict())
    optimizer_snapshot = copy.deepcopy(optimizer.state_dict())

    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
    updates = 0
    for epoch in range(cfg.epochs):
        for idx in minibatch_indices(n, cfg.minibatches, generator):
            policy_loss, value_loss, entropy, extra = ppo_losses(
                params, obs[idx], actions[idx], old_log_probs[idx], advantages[idx], returns[idx], cfg.clip
            )
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

            if not torch.isfinite(loss):
                params.load_state_dict(params_snapshot)
                optimizer.load_state_dict(optimizer_snapshot)
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (policy={policy_loss.item()}, value={value_loss.item()})"
                )

            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params.parameters(), cfg.max_grad_norm)
            optimizer.step()

            totals["policy_loss"] += policy_loss.item()
            totals["value_loss"] += value_loss.item()
            totals["entropy"] += entropy.item()
            totals["approx_kl"] += extra["approx_kl"]
            totals["clip_fraction"] += extra["clip_fraction"]
            updates += 1

    return UpdateStats(**{name: value / max(updates, 1) for name, value in totals.items()})


# ------------------------------------------------------------------
# Checkpoints
# ------------------------------------------------------------------
def _fmt(value: float) -> str:
    return format(float(value), f".{settings.FLOAT_DIGITS}g")


def checkpoint_text(params: ActorCritic) -> str:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "actor_hidden": params.actor_hidden,
        "critic_hidden": params.critic_hidden,
        "activation": params.activation,
        "meta": params.meta,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for name, tensor in params.state_dict().items():
        shape = "x".join(str(d) for d in tensor.shape) or "scalar"
        values = " ".join(_fmt(v) for v in tensor.reshape(-1).tolist())
        lines.append(f"{name} {shape} {values}")
    return "\n".join(lines) + "\n"


def checkpoint_id(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(params: ActorCritic, path: Union[str, Path]) -> str:
    """Write a text checkpoint; returns its id (content hash)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = checkpoint_text(params)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Saved checkpoint {path}")
    return checkpoint_id(text)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ActorCritic, str]:
    """Read a checkpoint; returns (network, checkpoint id)"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: unreadable checkpoint header") from e
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {header.get('format_version')}")

    params = ActorCritic(
        obs_dim=header["obs_dim"],
        act_dim=header["act_dim"],
        actor_hidden=header["actor_hidden"],
        critic_hidden=header["critic_hidden"],
        activation=header["activation"],
        meta=header.get("meta", {}),
    )
    expected = params.state_dict()
    state = {}
    for number, line in enumerate(lines[1:], start=2):
        name, shape, *values = line.split(" ")
        if name not in expected:
            raise ConfigError(f"{path}:{number}: unknown parameter '{name}'")
        tensor = torch.tensor([float(v) for v in values], dtype=DTYPE)
        if tensor.numel() != expected[name].numel():
            raise ConfigError(f"{path}:{number}: parameter '{name}' has {tensor.numel()} values, expected {expected[name].numel()}")
        state[name] = tensor.reshape(expected[name].shape)
    missing = set(expected) - set(state)
    if missing:
        raise ConfigError(f"{path}: missing parameters {sorted(missing)}")
    params.load_state_dict(state)
    return params, checkpoint_id(text)
