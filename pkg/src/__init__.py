"""
DecAP Lab - Core Module
"""
from src.config import settings
from src.exceptions import (
    ConfigError,
    DatasetError,
    DecapLabError,
    ModelValidationError,
    SimulationError,
    TrainingError,
)
from src.robots import RobotModel, list_bundled, load_model, save_model
from src.dynamics import SimState, contact_forces, forward_kinematics, initial_state, step
from src.task import Command, RewardWeights, TaskConfig, imitation_reward, observe, shaping_reward, terminate
from src.control import ActionConfig, DecaySchedule, Gains, apply_action, decay_factor, pd_torque
from src.env import EnvPool, EnvSettings, LocomotionEnv
from src.imitation import ImitationDataset, ImitationFrame, load_dataset, lookup, record, rmse, save_dataset
from src.ppo import ActorCritic, PpoConfig, collect_rollouts, gae, net_eval, ppo_update
from src.pipeline import RunConfig, RunManifest, evaluate, export, sweep, train_position, train_torque

__version__ = "0.1.0"
__all__ = [
    "settings",
    "ConfigError",
    "DatasetError",
    "DecapLabError",
    "ModelValidationError",
    "SimulationError",
    "TrainingError",
    "RobotModel",
    "list_bundled",
    "load_model",
    "save_model",
    "SimState",
    "contact_forces",
    "forward_kinematics",
    "initial_state",
    "step",
    "Command",
    "RewardWeights",
    "TaskConfig",
    "imitation_reward",
    "observe",
    "shaping_reward",
    "terminate",
    "ActionConfig",
    "DecaySchedule",
    "Gains",
    "apply_action",
    "decay_factor",
    "pd_torque",
    "EnvPool",
    "EnvSettings",
    "LocomotionEnv",
    "ImitationDataset",
    "ImitationFrame",
    "load_dataset",
    "lookup",
    "record",
    "rmse",
    "save_dataset",
    "ActorCritic",
    "PpoConfig",
    "collect_rollouts",
    "gae",
    "net_eval",
    "ppo_update",
    "RunConfig",
    "RunManifest",
    "evaluate",
    "export",
    "sweep",
    "train_position",
    "train_torque",
]
