"""
Tests for the planar rigid-body simulator
"""
import math

import numpy as np
import pytest

from conftest import pendulum_dict
from src import dynamics
from src.control import Gains, pd_torque
from src.dynamics import SimState, coulomb_clamp, normal_force
from src.exceptions import SimulationError
from src.robots import model_from_dict


def pendulum_state(q0, height=2.0, qdot0=0.0):
    return SimState(q=[q0], qdot=[qdot0], base_pos=[0.0, height, 0.0], base_vel=[0.0, 0.0, 0.0])


class TestStep:
    """Test suite for the semi-implicit Euler step"""

    def test_free_flight(self, hopper):
        """Test gravity alone changes vz by g*dt and z by the updated velocity"""
        v0 = 0.3
        state = SimState(q=hopper.q_nom, qdot=np.zeros(3), base_pos=[0.0, 2.0, 0.0], base_vel=[0.0, v0, 0.0])
        nxt, report = dynamics.step(state, np.zeros(3), hopper, 0.005)
        assert nxt.base_vel[1] == pytest.approx(v0 - 0.04905, abs=1e-9)
        assert nxt.base_pos[1] - 2.0 == pytest.approx((v0 - 0.04905) * 0.005, abs=1e-9)
        assert nxt.time_step == 1
        assert not report.in_contact.any()

    def test_rest_without_gravity(self, hopper):
        """Test a resting robot stays put when gravity is zero"""
        document = hopper.to_dict()
        document["gravity"] = 0.0
        model = model_from_dict(document)
        state = dynamics.initial_state(model, height=1.0)
        nxt, _ = dynamics.step(state, np.zeros(3), model, 0.005)
        np.testing.assert_array_equal(nxt.q, state.q)
        np.testing.assert_array_equal(nxt.qdot, state.qdot)
        np.testing.assert_array_equal(nxt.base_pos, state.base_pos)
        np.testing.assert_array_equal(nxt.base_vel, state.base_vel)
        assert nxt.time_step == state.time_step + 1

    def test_damped_pendulum_energy_non_increasing(self, pendulum):
        """Test mechanical energy never rises without torque or contact"""
        state = pendulum_state(0.3)
        energy = dynamics.mechanical_energy(state, pendulum)
        for _ in range(2000):
            state, report = dynamics.step(state, np.zeros(1), pendulum, 0.005)
            assert not report.in_contact.any()
            current = dynamics.mechanical_energy(state, pendulum)
            assert current <= energy + 1e-12
            energy = current

    def test_small_angle_frequency(self):
        """Test a small-angle pendulum oscillates at sqrt(g/l) within 1%"""
        model = model_from_dict(pendulum_dict(length=1.0, damping=0.0))
        dt = 0.001
        state = pendulum_state(0.01, height=3.0)
        crossings = []
        previous = state.q[0]
        for i in range(1, 6000):
            state, _ = dynamics.step(state, np.zeros(1), model, dt)
            current = state.q[0]
            if previous < 0.0 <= current:
                crossings.append((i - 1 + previous / (previous - current)) * dt)
            previous = current
        assert len(crossings) >= 2
        period = crossings[1] - crossings[0]
        expected = 2.0 * math.pi / math.sqrt(9.81 / 1.0)
        assert period == pytest.approx(expected, rel=0.01)

    def test_torques_clamped(self, hopper):
        """Test the applied torque never exceeds the model limits"""
        state = dynamics.initial_state(hopper)
        nxt, _ = dynamics.step(state, np.array([100.0, -100.0, 50.0]), hopper, 0.005)
        np.testing.assert_array_equal(nxt.tau, [20.0, -20.0, 15.0])

    def test_joint_limit_clamps_and_stops(self):
        """Test a joint driven into its limit is held there with zero velocity"""
        model = model_from_dict(pendulum_dict(limits=[[-0.5, 0.5]]))
        state = pendulum_state(0.0)
        for _ in range(300):
            state, _ = dynamics.step(state, np.array([20.0]), model, 0.005)
            assert -0.5 <= state.q[0] <= 0.5
        assert state.q[0] == 0.5
        assert state.qdot[0] == 0.0

    def test_deterministic(self, hopper):
        """Test identical inputs give bit-identical trajectories"""
        gains = Gains(kp=20.0, kd=0.5)

        def rollout():
            state = dynamics.initial_state(hopper)
            states = []
            for i in range(200):
                target = hopper.q_nom + 0.2 * np.sin(0.05 * i)
                state, _ = dynamics.step(state, pd_torque(target, state.q, state.qdot, gains), hopper, 0.005)
                states.append(np.concatenate((state.q, state.qdot, state.base_pos, state.base_vel)))
            return np.array(states)

        np.testing.assert_array_equal(rollout(), rollout())

    def test_rejects_bad_dt(self, hopper):
        """Test dt <= 0 is rejected"""
        with pytest.raises(SimulationError):
            dynamics.step(dynamics.initial_state(hopper), np.zeros(3), hopper, 0.0)

    def test_rejects_non_finite_torque(self, hopper):
        """Test a NaN torque is rejected"""
        with pytest.raises(SimulationError):
            dynamics.step(dynamics.initial_state(hopper), np.array([0.0, np.nan, 0.0]), hopper, 0.005)

    def test_rejects_wrong_torque_length(self, hopper):
        """Test the torque vector must match the joint count"""
        with pytest.raises(SimulationError):
            dynamics.step(dynamics.initial_state(hopper), np.zeros(2), hopper, 0.005)

    def test_mass_matrix_symmetric_positive_definite(self, hopper, rng):
        """Test the generalized mass matrix is SPD across random poses"""
        for _ in range(50):
            q = rng.uniform(hopper.q_lower, hopper.q_upper)
            state = SimState(q=q, qdot=np.zeros(3), base_pos=[0.0, 0.5, rng.uniform(-0.5, 0.5)], base_vel=np.zeros(3))
            M = dynamics.mass_matrix(state, hopper)
            np.testing.assert_allclose(M, M.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(M) > 0)


class TestContact:
    """Test suite for the penalty contact model"""

    def test_normal_force_formula(self):
        """Test 1 mm penetration at k_n = 10000 gives 10 N"""
        assert normal_force(0.001, 0.0, 10000.0, 40.0) == pytest.approx(10.0, abs=1e-12)

    def test_normal_force_never_pulls(self):
        """Test a separating foot cannot produce an attractive force"""
        assert normal_force(0.001, -10.0, 10000.0, 40.0) == 0.0
        assert normal_force(-0.01, 0.0, 10000.0, 40.0) == 0.0

    def test_coulomb_clamp(self):
        """Test a 20 N demand under 10 N normal and mu 0.8 is clamped to 8 N"""
        assert coulomb_clamp(20.0, 10.0, 0.8) == pytest.approx(8.0)
        assert coulomb_clamp(-20.0, 10.0, 0.8) == pytest.approx(-8.0)
        assert coulomb_clamp(3.0, 10.0, 0.8) == 3.0

    def test_foot_above_ground(self, hopper):
        """Test a foot 0.1 m above the ground feels nothing"""
        state = dynamics.initial_state(hopper, height=hopper.nominal_height + 0.1)
        report = dynamics.contact_forces(state, hopper)
        assert not report.in_contact.any()
        assert np.all(report.normal == 0.0)
        assert np.all(report.tangential == 0.0)
        assert report.n_collisions == 0

    def test_torso_contact_flagged(self, hopper):
        """Test a torso below ground level raises collision flag 0"""
        state = dynamics.initial_state(hopper, height=0.02)
        report = dynamics.contact_forces(state, hopper)
        assert report.torso_contact

    def test_contact_cone_property(self, hopper, rng):
        """Test normal >= 0 and |tangential| <= mu * normal on random states"""
        mu = hopper.contact.mu
        for _ in range(1000):
            state = SimState(
                q=rng.uniform(hopper.q_lower, hopper.q_upper),
                qdot=rng.normal(0.0, 3.0, size=3),
                base_pos=[0.0, rng.uniform(0.2, 0.55), rng.uniform(-0.6, 0.6)],
                base_vel=rng.normal(0.0, 1.0, size=3),
            )
            report = dynamics.contact_forces(state, hopper)
            assert np.all(report.normal >= 0.0)
            assert np.all(np.abs(report.tangential) <= mu * report.normal + 1e-12)
            assert np.all(report.penetration[report.in_contact] >= 0.0)


class TestForwardKinematics:
    """Test suite for foot positions"""

    def test_straight_leg(self, two_link):
        """Test q = (0, 0) puts the foot 0.4 m below the hip"""
        world, body = dynamics.forward_kinematics(np.zeros(2), np.zeros(3), two_link)
        np.testing.assert_allclose(world[0], [0.0, -0.4], atol=1e-12)
        np.testing.assert_allclose(body[0], [0.0, -0.4], atol=1e-12)

    def test_leg_swung_forward(self, two_link):
        """Test q = (pi/2, 0) puts the foot 0.4 m ahead of the hip"""
        world, _ = dynamics.forward_kinematics(np.array([math.pi / 2, 0.0]), np.zeros(3), two_link)
        np.testing.assert_allclose(world[0], [0.4, 0.0], atol=1e-12)

    def test_closed_form_two_link(self, two_link, rng):
        """Test random configurations against the two-link closed form"""
        for _ in range(200):
            q1, q2 = rng.uniform(-3.0, 3.0, size=2)
            world, _ = dynamics.forward_kinematics(np.array([q1, q2]), np.zeros(3), two_link)
            expected = [
                0.2 * math.sin(q1) + 0.2 * math.sin(q1 + q2),
                -0.2 * math.cos(q1) - 0.2 * math.cos(q1 + q2),
            ]
            np.testing.assert_allclose(world[0], expected, atol=1e-12)

    def test_body_frame_translation_invariant(self, hopper):
        """Test moving the base leaves body-frame foot positions unchanged"""
        _, body_a = dynamics.forward_kinematics(hopper.q_nom, np.array([0.0, 0.5, 0.2]), hopper)
        _, body_b = dynamics.forward_kinematics(hopper.q_nom, np.array([1.0, 0.5, 0.2]), hopper)
        np.testing.assert_allclose(body_a, body_b, atol=1e-12)

    def test_wrong_length_rejected(self, hopper):
        """Test q must have one angle per joint"""
        with pytest.raises(SimulationError):
            dynamics.forward_kinematics(np.zeros(2), np.zeros(3), hopper)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
