"""
Tests for imitation recording, lookup, metrics and the .imit format
"""
import logging
import math

import numpy as np
import pytest

from conftest import make_dataset
from src.control import ActionConfig, Gains
from src.env import EnvSettings
from src.exceptions import ConfigError, DatasetError
from src.imitation import (
    DatasetHeader,
    ImitationDataset,
    ImitationFrame,
    Trajectory,
    gain_sensitivity,
    load_dataset,
    lookup,
    record,
    rmse,
    rollout_position_policy,
    save_dataset,
)
from src.ppo import ActorCritic, seed_everything
from src.task import Command, RewardWeights, TaskConfig, observation_size


@pytest.fixture
def position_env(hopper):
    return EnvSettings(model=hopper, task=TaskConfig(), rewards=RewardWeights(), action=ActionConfig(mode="position"))


@pytest.fixture
def position_policy(hopper):
    seed_everything(0)
    return ActorCritic(
        observation_size(hopper.n_joints), hopper.n_joints, [16], [16],
        init_log_std=math.log(0.5), meta={"mode": "position", "robot": hopper.name},
    )


class TestLookup:
    """Test suite for nearest-command frame lookup"""

    def test_exact_command(self, hopper_dataset):
        """Test an exact command match returns that trajectory's frame"""
        frame = lookup(hopper_dataset, Command(0.9, 0.0), 3)
        assert frame == hopper_dataset.trajectories[1].frames[3]

    def test_nearest_command(self, hopper_dataset):
        """Test an off-grid command picks the closest trajectory"""
        assert lookup(hopper_dataset, Command(0.8, 0.0), 0).v_cmd == 0.9
        assert lookup(hopper_dataset, Command(0.1, 0.0), 0).v_cmd == 0.3

    def test_wraps_modulo_length(self, hopper_dataset):
        """Test t beyond the trajectory length wraps around"""
        assert lookup(hopper_dataset, Command(0.3, 0.0), 13) == hopper_dataset.trajectories[0].frames[3]

    def test_tie_goes_to_lower_index(self, hopper):
        """Test an equidistant command resolves to the first trajectory"""
        ds = make_dataset(hopper, commands=(0.25, 0.75))
        assert lookup(ds, Command(0.5, 0.0), 0).v_cmd == 0.25

    def test_empty_dataset(self, hopper_dataset):
        """Test lookup on a dataset without trajectories fails"""
        empty = ImitationDataset(header=hopper_dataset.header, trajectories=())
        with pytest.raises(DatasetError):
            lookup(empty, Command(0.5), 0)

    def test_dt_mismatch(self, hopper_dataset):
        """Test a run dt different from the recording dt is rejected"""
        with pytest.raises(DatasetError):
            hopper_dataset.lookup(Command(0.5), 0, dt=0.01)


class TestRmse:
    """Test suite for the angle RMSE metric"""

    def test_identical(self):
        """Test identical series give zero"""
        a = np.arange(12.0).reshape(4, 3)
        assert rmse(a, a) == 0.0

    def test_constant_offset(self):
        """Test a constant 0.1 rad offset gives 0.1"""
        a = np.zeros((50, 3))
        assert rmse(a + 0.1, a) == pytest.approx(0.1, abs=1e-12)

    def test_sinusoid_against_zero(self):
        """Test a full-period sinusoid of amplitude A gives A / sqrt(2)"""
        t = np.arange(1000) / 1000.0
        wave = 0.3 * np.sin(2.0 * np.pi * t)[:, None]
        assert rmse(wave, np.zeros_like(wave)) == pytest.approx(0.3 / math.sqrt(2.0), rel=1e-9)

    def test_shape_mismatch(self):
        """Test series of different shapes are rejected"""
        with pytest.raises(ValueError):
            rmse(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_empty(self):
        """Test empty series are rejected"""
        with pytest.raises(ValueError):
            rmse(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_invariant_to_step_order(self, rng):
        """Test permuting steps consistently leaves the RMSE unchanged"""
        a, b = rng.normal(size=(2, 40, 3))
        order = rng.permutation(40)
        assert rmse(a[order], b[order]) == pytest.approx(rmse(a, b), rel=1e-12)


class TestPersistence:
    """Test suite for save_dataset / load_dataset"""

    def test_round_trip(self, hopper, tmp_path):
        """Test a 1000-frame dataset reloads bit-exact"""
        ds = make_dataset(hopper, commands=(0.3, 0.6), frames=500)
        path = save_dataset(ds, tmp_path / "walk.imit")
        loaded = load_dataset(path)
        assert loaded.n_frames == 1000
        assert loaded.header == ds.header
        for original, restored in zip(ds.trajectories, loaded.trajectories):
            assert restored.command == original.command
            assert restored.frames == original.frames

    def test_random_round_trips(self, rng, tmp_path):
        """Test 1000 random datasets reload bit-exact"""
        for case in range(1000):
            n, feet = int(rng.integers(1, 6)), int(rng.integers(1, 3))
            trajectories = []
            for _ in range(int(rng.integers(1, 4))):
                cmd = Command(float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0)))
                frames = tuple(
                    ImitationFrame(
                        q_hat=rng.normal(size=n),
                        h_hat=float(rng.uniform(0.0, 2.0)),
                        r_e_hat=rng.normal(size=(feet, 2)),
                        r_z_hat=rng.normal(size=feet),
                        v_cmd=cmd.v_cmd,
                        w_cmd=cmd.w_cmd,
                        step_index=i,
                    )
                    for i in range(int(rng.integers(1, 6)))
                )
                trajectories.append(Trajectory(command=cmd, frames=frames))
            header = DatasetHeader(
                robot=f"robot{case}", dt=float(rng.uniform(1e-4, 0.05)),
                kp=tuple(rng.uniform(0.0, 50.0, size=n).tolist()), kd=tuple(rng.uniform(0.0, 2.0, size=n).tolist()),
                checkpoint_id=f"{case:08x}", n_joints=n, n_feet=feet, settle_steps=int(rng.integers(0, 200)),
            )
            ds = ImitationDataset(header=header, trajectories=tuple(trajectories))
            loaded = load_dataset(save_dataset(ds, tmp_path / "random.imit"))
            assert loaded.header == ds.header
            assert loaded.trajectories == ds.trajectories

    def test_missing_file(self, tmp_path):
        """Test a missing dataset is a configuration error"""
        with pytest.raises(ConfigError):
            load_dataset(tmp_path / "absent.imit")

    def test_truncated_names_last_good_line(self, hopper_dataset, tmp_path):
        """Test a truncated file reports the last line that parsed"""
        path = save_dataset(hopper_dataset, tmp_path / "walk.imit")
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:15]) + "\n")
        with pytest.raises(DatasetError) as info:
            load_dataset(path)
        assert info.value.line_number == 15
        assert "last good line 15" in str(info.value)

    def test_version_mismatch(self, hopper_dataset, tmp_path):
        """Test an unknown format_version is rejected on line 1"""
        path = save_dataset(hopper_dataset, tmp_path / "walk.imit")
        text = path.read_text().replace('"format_version": 1', '"format_version": 9')
        path.write_text(text)
        with pytest.raises(DatasetError) as info:
            load_dataset(path)
        assert info.value.line_number == 1

    def test_malformed_number(self, hopper_dataset, tmp_path):
        """Test a non-numeric field is reported with its line number"""
        path = save_dataset(hopper_dataset, tmp_path / "walk.imit")
        lines = path.read_text().splitlines()
        fields = lines[4].split()
        fields[5] = "abc"
        lines[4] = " ".join(fields)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError) as info:
            load_dataset(path)
        assert info.value.line_number == 5

    def test_dt_mismatch_warns_then_lookup_fails(self, hopper_dataset, tmp_path, caplog):
        """Test loading under another dt warns and lookups at that dt fail"""
        path = save_dataset(hopper_dataset, tmp_path / "walk.imit")
        with caplog.at_level(logging.WARNING):
            ds = load_dataset(path, expected_dt=0.01)
        assert "differs from run dt" in caplog.text
        with pytest.raises(DatasetError):
            ds.lookup(Command(0.3), 0, dt=0.01)


class TestRecording:
    """Test suite for recording tracked states from a position policy"""

    def test_settle_window_discarded(self, position_policy, position_env):
        """Test 3 commands x 500 steps with a 100-step settle window keep 400 frames each"""
        commands = [Command(0.3), Command(0.6), Command(0.9)]
        ds = record(position_policy, commands, 500, position_env, settle_steps=100, show_progress=False)
        assert [len(t) for t in ds.trajectories] == [400, 400, 400]
        assert [t.command for t in ds.trajectories] == commands
        assert ds.trajectories[0].frames[0].step_index == 100
        assert ds.header.settle_steps == 100
        assert ds.header.kp == (20.0, 20.0, 20.0)

    def test_tracked_not_desired(self, position_policy, position_env):
        """Test stored angles are the reached ones, which lag the PD targets"""
        trace, frames = rollout_position_policy(position_policy, position_env, Command(0.5), 150)
        assert len(frames) == trace.length == 150
        q_des = np.stack(trace.q_des)
        q_hat = np.stack([f.q_hat for f in frames])
        np.testing.assert_array_equal(q_hat, np.stack(trace.q))
        assert np.any(np.abs(q_hat - q_des) > 1e-6)

    def test_deterministic(self, position_policy, position_env):
        """Test recording twice gives identical datasets"""
        commands = [Command(0.4)]
        a = record(position_policy, commands, 200, position_env, settle_steps=50, show_progress=False)
        b = record(position_policy, commands, 200, position_env, settle_steps=50, show_progress=False)
        assert a.trajectories[0].frames == b.trajectories[0].frames

    def test_rejects_torque_policy(self, hopper, position_env):
        """Test a policy trained in torque space cannot produce imitation data"""
        policy = ActorCritic(observation_size(3), 3, [8], [8], meta={"mode": "torque", "robot": hopper.name})
        with pytest.raises(ConfigError):
            record(policy, [Command(0.5)], 200, position_env, settle_steps=50, show_progress=False)

    def test_rejects_other_robot(self, position_env):
        """Test a policy for another robot is rejected"""
        policy = ActorCritic(observation_size(3), 3, [8], [8], meta={"mode": "position", "robot": "quad2d"})
        with pytest.raises(ConfigError):
            record(policy, [Command(0.5)], 200, position_env, settle_steps=50, show_progress=False)

    def test_settle_longer_than_rollout(self, position_policy, position_env):
        """Test steps must exceed the settle window"""
        with pytest.raises(ConfigError):
            record(position_policy, [Command(0.5)], 100, position_env, settle_steps=100, show_progress=False)

    def test_gain_sensitivity_report(self, position_policy, position_env):
        """Test the gain comparison yields finite non-negative RMSEs"""
        result = gain_sensitivity(
            position_policy, position_env, Gains(kp=20.0, kd=0.5), Gains(kp=40.0, kd=0.5),
            Command(0.5), 200, settle_steps=50,
        )
        assert result.steps == 150
        assert result.rmse_desired >= 0.0
        assert result.rmse_tracked >= 0.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
