"""
Tests for observations, rewards, command sampling and termination
"""
import math

import numpy as np
import pytest

from src import dynamics
from src.dynamics import ContactReport, SimState
from src.exceptions import DatasetError
from src.imitation import ImitationFrame
from src.task import (
    IMITATION_TERMS,
    Command,
    CommandRanges,
    RewardWeights,
    TaskConfig,
    imitation_reward,
    observation_size,
    observe,
    projected_gravity,
    sample_command,
    shaping_reward,
    terminate,
)

DT = 0.005
TRACKING_TERMS = ("lin_vel", "ang_vel")
PENALTY_TERMS = (
    "collisions", "action_rate", "orientation", "ang_vel_penalty",
    "lin_vel_penalty", "joint_torques", "joint_motion", "feet_slip",
)


def no_contact(n_feet=1, n_joints=3):
    return ContactReport(
        normal=np.zeros(n_feet),
        tangential=np.zeros(n_feet),
        penetration=np.zeros(n_feet),
        in_contact=np.zeros(n_feet, dtype=bool),
        slip_velocity=np.zeros(n_feet),
        collisions=np.zeros(n_joints + 1, dtype=bool),
    )


def make_state(q=None, qdot=None, height=0.475, pitch=0.0, vx=0.0, vz=0.0, pitch_rate=0.0, time_step=0):
    q = np.zeros(3) if q is None else q
    qdot = np.zeros(3) if qdot is None else qdot
    return SimState(q=q, qdot=qdot, base_pos=[0.0, height, pitch], base_vel=[vx, vz, pitch_rate], time_step=time_step)


def reference_for(state, model, fk=None):
    world, body = fk or dynamics.forward_kinematics(state.q, state.base_pos, model)
    return ImitationFrame(
        q_hat=state.q.copy(), h_hat=state.height, r_e_hat=body.copy(), r_z_hat=world[:, 1].copy(),
        v_cmd=0.5, w_cmd=0.0, step_index=0,
    )


class TestObservation:
    """Test suite for observe"""

    def test_upright_gravity(self):
        """Test a level base sees gravity straight down"""
        np.testing.assert_array_equal(projected_gravity(0.0), [0.0, -1.0])

    def test_pitched_gravity(self):
        """Test pitch pi/2 puts gravity along the body x axis"""
        np.testing.assert_allclose(projected_gravity(math.pi / 2), [1.0, 0.0], atol=1e-12)

    def test_rotation_oracle(self, rng):
        """Test g_proj equals world gravity rotated into the torso frame"""
        for theta in rng.uniform(-math.pi, math.pi, size=1000):
            # Torso frame is the world frame rotated by -theta (pitch positive nose-down)
            c, s = math.cos(-theta), math.sin(-theta)
            rotation = np.array([[c, -s], [s, c]])
            expected = rotation.T @ np.array([0.0, -1.0])
            g = projected_gravity(theta)
            np.testing.assert_allclose(g, expected, atol=1e-12)
            assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-9)

    def test_layout_length(self, hopper):
        """Test three joints give 2 + 2 + 9 = 13 entries"""
        obs = observe(dynamics.initial_state(hopper), Command(0.5, 0.0), np.zeros(3))
        assert observation_size(3) == 13
        assert obs.as_array().shape == (13,)

    def test_layout_order(self):
        """Test blocks appear as g_proj, commands, q, qdot, a_prev"""
        state = make_state(q=np.array([0.1, 0.2, 0.3]), qdot=np.array([1.0, 2.0, 3.0]))
        a_prev = np.array([-1.0, -2.0, -3.0])
        vector = observe(state, Command(0.7, 0.1), a_prev).as_array()
        np.testing.assert_array_equal(vector[2:4], [0.7, 0.1])
        np.testing.assert_array_equal(vector[4:7], state.q)
        np.testing.assert_array_equal(vector[7:10], state.qdot)
        np.testing.assert_array_equal(vector[10:13], a_prev)

    def test_a_prev_length_checked(self):
        """Test a_prev must have one entry per joint"""
        with pytest.raises(ValueError):
            observe(make_state(), Command(0.5), np.zeros(2))


class TestShapingReward:
    """Test suite for the task and regularization terms"""

    @pytest.fixture
    def weights(self):
        return RewardWeights()

    def test_perfect_tracking(self, weights):
        """Test exact velocity tracking earns w * dt on both tracking terms"""
        state = make_state(vx=0.5)
        _, terms = shaping_reward(state, state, np.zeros(3), no_contact(), Command(0.5, 0.0), np.zeros(3), np.zeros(3), weights)
        assert terms["lin_vel"] == pytest.approx(1.0 * DT, abs=1e-12)
        assert terms["ang_vel"] == pytest.approx(1.0 * DT, abs=1e-12)

    def test_tracking_error_kernel(self, weights):
        """Test a squared velocity error of 0.25 gives exp(-1) * dt"""
        state = make_state(vx=0.0)
        _, terms = shaping_reward(state, state, np.zeros(3), no_contact(), Command(0.5, 0.0), np.zeros(3), np.zeros(3), weights)
        assert terms["lin_vel"] == pytest.approx(math.exp(-1.0) * DT, abs=1e-12)

    def test_penalties_vanish_at_rest(self, weights):
        """Test zero torque, motion and contact give zero penalties"""
        state = make_state(vx=0.5)
        _, terms = shaping_reward(state, state, np.zeros(3), no_contact(), Command(0.5, 0.0), np.zeros(3), np.zeros(3), weights)
        for name in PENALTY_TERMS:
            assert terms[name] == 0.0

    def test_collision_count(self, weights):
        """Test each flagged body costs w * dt"""
        contact = no_contact()
        collisions = np.array([False, True, True, False])
        contact = ContactReport(contact.normal, contact.tangential, contact.penetration,
                                contact.in_contact, contact.slip_velocity, collisions)
        state = make_state()
        _, terms = shaping_reward(state, state, np.zeros(3), contact, Command(0.5), np.zeros(3), np.zeros(3), weights)
        assert terms["collisions"] == pytest.approx(-2.0 * DT, abs=1e-12)

    def test_decomposition_and_ranges(self, weights, rng):
        """Test total = sum of terms, tracking terms in (0, w dt], penalties <= 0"""
        for _ in range(1000):
            prev = make_state(qdot=rng.normal(size=3))
            curr = make_state(
                q=rng.normal(size=3), qdot=rng.normal(size=3), pitch=rng.uniform(-1, 1),
                vx=rng.normal(), vz=rng.normal(), pitch_rate=rng.normal(),
            )
            contact = ContactReport(
                normal=rng.uniform(0, 50, size=1), tangential=np.zeros(1), penetration=rng.uniform(0, 0.01, size=1),
                in_contact=rng.uniform(size=1) < 0.5, slip_velocity=rng.normal(size=1),
                collisions=rng.uniform(size=4) < 0.3,
            )
            total, terms = shaping_reward(
                prev, curr, rng.uniform(-20, 20, size=3), contact,
                Command(rng.uniform(0.3, 1.0), 0.0), rng.normal(size=3), rng.normal(size=3), weights,
            )
            assert total == pytest.approx(sum(terms.values()), abs=1e-12)
            for name in TRACKING_TERMS:
                assert 0.0 < terms[name] <= getattr(weights, name) * DT
            for name in PENALTY_TERMS:
                assert terms[name] <= 0.0


class TestImitationReward:
    """Test suite for the imitation terms"""

    @pytest.fixture
    def weights(self):
        return RewardWeights()

    def test_exact_reference(self, hopper, weights):
        """Test matching the reference earns every exponential weight and no height penalty"""
        state = dynamics.initial_state(hopper)
        fk = dynamics.forward_kinematics(state.q, state.base_pos, hopper)
        _, terms = imitation_reward(state, reference_for(state, hopper), fk, weights)
        assert terms["joint_angles"] == pytest.approx(1.5 * DT, abs=1e-12)
        assert terms["ee_position"] == pytest.approx(1.5 * DT, abs=1e-12)
        assert terms["foot_height"] == pytest.approx(1.5 * DT, abs=1e-12)
        assert terms["base_height"] == 0.0

    def test_joint_angle_kernel(self, hopper, weights):
        """Test ||q_hat - q||^2 = 0.1 with sigma 0.1 gives 1.5 * dt * exp(-1)"""
        state = dynamics.initial_state(hopper)
        fk = dynamics.forward_kinematics(state.q, state.base_pos, hopper)
        ref = reference_for(state, hopper)
        shifted = ImitationFrame(
            q_hat=ref.q_hat + np.array([math.sqrt(0.1), 0.0, 0.0]), h_hat=ref.h_hat,
            r_e_hat=ref.r_e_hat, r_z_hat=ref.r_z_hat, v_cmd=0.5, w_cmd=0.0, step_index=0,
        )
        _, terms = imitation_reward(state, shifted, fk, weights)
        assert terms["joint_angles"] == pytest.approx(1.5 * DT * math.exp(-1.0), abs=1e-12)

    def test_base_height_penalty(self, hopper, weights):
        """Test a 0.05 m height error costs 10 * dt * 0.05"""
        state = dynamics.initial_state(hopper)
        fk = dynamics.forward_kinematics(state.q, state.base_pos, hopper)
        ref = reference_for(state, hopper)
        higher = ImitationFrame(
            q_hat=ref.q_hat, h_hat=ref.h_hat + 0.05, r_e_hat=ref.r_e_hat, r_z_hat=ref.r_z_hat,
            v_cmd=0.5, w_cmd=0.0, step_index=0,
        )
        _, terms = imitation_reward(state, higher, fk, weights)
        assert terms["base_height"] == pytest.approx(-0.5 * DT, abs=1e-12)

    def test_maximized_at_reference(self, hopper, weights, rng):
        """Test any single-coordinate perturbation lowers the imitation total"""
        state = dynamics.initial_state(hopper)
        fk = dynamics.forward_kinematics(state.q, state.base_pos, hopper)
        ref = reference_for(state, hopper)
        best, _ = imitation_reward(state, ref, fk, weights)
        for _ in range(1000):
            fields = {
                "q_hat": ref.q_hat.copy(), "h_hat": ref.h_hat,
                "r_e_hat": ref.r_e_hat.copy(), "r_z_hat": ref.r_z_hat.copy(),
            }
            which = rng.integers(4)
            delta = rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 0.5)
            if which == 0:
                fields["q_hat"][rng.integers(3)] += delta
            elif which == 1:
                fields["h_hat"] += delta
            elif which == 2:
                fields["r_e_hat"][0, rng.integers(2)] += delta
            else:
                fields["r_z_hat"][0] += delta
            perturbed = ImitationFrame(v_cmd=0.5, w_cmd=0.0, step_index=0, **fields)
            total, _ = imitation_reward(state, perturbed, fk, weights)
            assert total < best

    def test_scale_linearity(self, hopper, rng):
        """Test imitation_scale multiplies the imitation total"""
        state = dynamics.initial_state(hopper)
        fk = dynamics.forward_kinematics(state.q, state.base_pos, hopper)
        ref = reference_for(state, hopper)
        for _ in range(1000):
            moved = make_state(q=state.q + rng.normal(0, 0.1, size=3), height=state.height + rng.normal(0, 0.02))
            fk_moved = dynamics.forward_kinematics(moved.q, moved.base_pos, hopper)
            c = rng.uniform(0.1, 10.0)
            base, _ = imitation_reward(moved, ref, fk_moved, RewardWeights())
            scaled, terms = imitation_reward(moved, ref, fk_moved, RewardWeights(imitation_scale=c))
            assert scaled == pytest.approx(c * base, rel=1e-12, abs=1e-15)
            assert scaled == pytest.approx(sum(terms[name] for name in IMITATION_TERMS), abs=1e-12)

    def test_dimension_mismatch(self, hopper, weights):
        """Test a reference for another robot is rejected"""
        state = dynamics.initial_state(hopper)
        fk = dynamics.forward_kinematics(state.q, state.base_pos, hopper)
        ref = reference_for(state, hopper)
        wrong = ImitationFrame(
            q_hat=np.zeros(4), h_hat=ref.h_hat, r_e_hat=ref.r_e_hat, r_z_hat=ref.r_z_hat,
            v_cmd=0.5, w_cmd=0.0, step_index=0,
        )
        with pytest.raises(DatasetError):
            imitation_reward(state, wrong, fk, weights)

    def test_scaled_imitation_weights(self):
        """Test sweep scaling multiplies only the three exponential weights"""
        weights = RewardWeights().scaled_imitation(10.0)
        assert weights.joint_angles == 15.0
        assert weights.ee_position == 15.0
        assert weights.foot_height == 15.0
        assert weights.base_height == 10.0


class TestCommands:
    """Test suite for command sampling"""

    def test_degenerate_range(self, rng):
        """Test a zero-width range always returns its value"""
        ranges = CommandRanges(lin_vel=(0.5, 0.5))
        assert all(sample_command(rng, ranges).v_cmd == 0.5 for _ in range(100))

    def test_reproducible(self):
        """Test a fixed seed reproduces the sequence"""
        ranges = CommandRanges(lin_vel=(0.0, 1.0))
        a = [sample_command(np.random.default_rng(7), ranges) for _ in range(1)]
        rng_a, rng_b = np.random.default_rng(7), np.random.default_rng(7)
        seq_a = [sample_command(rng_a, ranges) for _ in range(50)]
        seq_b = [sample_command(rng_b, ranges) for _ in range(50)]
        assert seq_a == seq_b
        assert a[0] == seq_a[0]

    def test_uniform_mean(self):
        """Test 10^5 samples over [0, 1] average 0.5 +- 0.01"""
        rng = np.random.default_rng(0)
        ranges = CommandRanges(lin_vel=(0.0, 1.0))
        values = [sample_command(rng, ranges).v_cmd for _ in range(100_000)]
        assert abs(np.mean(values) - 0.5) < 0.01

    def test_inverted_range_rejected(self):
        """Test lo > hi is a configuration error"""
        with pytest.raises(ValueError):
            CommandRanges(lin_vel=(1.0, 0.5))


class TestTermination:
    """Test suite for episode termination"""

    def test_upright(self):
        """Test a normal state continues"""
        assert terminate(make_state(time_step=10), no_contact()) == (False, "")

    def test_orientation(self):
        """Test |pitch| above the limit ends the episode"""
        assert terminate(make_state(pitch=1.5), no_contact()) == (True, "orientation")

    def test_timeout(self):
        """Test reaching max_steps ends the episode"""
        assert terminate(make_state(time_step=1000), no_contact(), TaskConfig()) == (True, "timeout")

    def test_base_contact(self):
        """Test a torso collision ends the episode"""
        contact = no_contact()
        contact = ContactReport(contact.normal, contact.tangential, contact.penetration,
                                contact.in_contact, contact.slip_velocity, np.array([True, False, False, False]))
        assert terminate(make_state(), contact) == (True, "base_contact")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
