"""
Shared fixtures: small hand-built robots, the bundled hopper and a synthetic
imitation dataset.
"""
import json

import numpy as np
import pytest

from src import dynamics
from src.config import settings
from src.control import ActionConfig
from src.env import EnvSettings
from src.imitation import DatasetHeader, ImitationDataset, Trajectory, frame_from_state
from src.pipeline import load_run_config
from src.robots import load_model, model_from_dict
from src.task import Command, RewardWeights, TaskConfig


def model_dict(
    links,
    fixed_base=True,
    gravity=9.81,
    feet=None,
    limits=None,
    nominal=None,
    torque=20.0,
    name="test_robot",
):
    n = len(links)
    return {
        "format_version": 1,
        "name": name,
        "gravity": gravity,
        "fixed_base": fixed_base,
        "base": {"mass": 1.0, "inertia": 0.05, "half_length": 0.1, "half_height": 0.05},
        "links": links,
        "torque_limits": [torque] * n,
        "joint_limits": limits or [[-3.0, 3.0]] * n,
        "nominal_pose": nominal or [0.0] * n,
        "contact": {"k_n": 5000.0, "c_n": 40.0, "k_t": 40.0, "mu": 0.8},
        "feet": feet if feet is not None else [n - 1],
        "nominal_height": 1.0,
    }


def pendulum_dict(length=0.5, mass=1.0, damping=0.5, limits=None):
    link = {"name": "rod", "parent": -1, "offset": [0.0, 0.0], "mass": mass, "length": length,
            "inertia": 0.0, "damping": damping, "com": 1.0}
    return model_dict([link], limits=limits)


@pytest.fixture
def hopper():
    return load_model("hopper")


@pytest.fixture
def pendulum():
    return model_from_dict(pendulum_dict())


@pytest.fixture
def two_link():
    links = [
        {"name": "thigh", "parent": -1, "offset": [0.0, 0.0], "mass": 1.0, "length": 0.2, "inertia": 0.01},
        {"name": "shank", "parent": 0, "mass": 1.0, "length": 0.2, "inertia": 0.01},
    ]
    return model_from_dict(model_dict(links))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hopper_env(hopper):
    return EnvSettings(model=hopper, task=TaskConfig(), rewards=RewardWeights(), action=ActionConfig(mode="torque"))


def make_dataset(model, commands=(0.3, 0.9), frames=10, dt=0.005, checkpoint_id="synthetic"):
    """Frames of the nominal standing pose with slowly varying joint angles"""
    trajectories = []
    for v in commands:
        cmd = Command(v, 0.0)
        items = []
        for i in range(frames):
            q = model.q_nom + 0.01 * np.sin(0.3 * i + v)
            state = dynamics.SimState(
                q=q, qdot=np.zeros(model.n_joints),
                base_pos=[0.0, model.nominal_height, 0.0], base_vel=np.zeros(3),
            )
            items.append(frame_from_state(state, model, cmd, i))
        trajectories.append(Trajectory(command=cmd, frames=tuple(items)))
    kp = tuple([20.0] * model.n_joints)
    kd = tuple([0.5] * model.n_joints)
    header = DatasetHeader(
        robot=model.name, dt=dt, kp=kp, kd=kd, checkpoint_id=checkpoint_id,
        n_joints=model.n_joints, n_feet=model.n_feet, settle_steps=0,
    )
    return ImitationDataset(header=header, trajectories=tuple(trajectories))


@pytest.fixture
def hopper_dataset(hopper):
    return make_dataset(hopper)


TINY_OVERRIDES = (
    "ppo.n_envs=2",
    "ppo.steps_per_iteration=8",
    "ppo.iterations=3",
    "ppo.epochs=1",
    "ppo.minibatches=2",
    "ppo.actor_hidden=[8]",
    "ppo.critic_hidden=[8]",
    "eval.interval=1",
    "eval.steps=20",
    "eval.episodes=1",
)


def tiny_config(mode, output_dir, *extra):
    """Bundled hopper config shrunk to a few seconds of CPU"""
    overrides = [*TINY_OVERRIDES, f"output_dir={json.dumps(str(output_dir))}", *extra]
    return load_run_config(f"hopper_{mode}", overrides)


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    """Default run directories land under the test's tmp_path"""
    monkeypatch.setattr(settings, "DECAP_LAB_DIR", str(tmp_path / "runs"))
