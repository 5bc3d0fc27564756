import unittest

import numpy as np

from models.classifier import ClassifierConfig
from models.errors import BlockPreconditionError, HandoverTimeoutError, InvalidPathError, UsageError
from models.robot_sim import (STATE_SEQUENCE, BlockMetrics, EndEffectorState, ExpressiveSpec,
                              HandoverSimulator, HandoverState, NeutralSpec, TaskGeometry,
                              TrialMetrics, balanced_sequence, check_spill, expressive_command,
                              human_trial_source, neutral_command, net_time_from_log,
                              step_end_effector)
from models.signal_processing import derivative, distance_series
from models.synth import MinJerkParams, SynthConfig, min_jerk
from models.trajectory import Condition, CupContent, TrialMeta, Trajectory

DT = 1.0 / 40.0


def still_trajectory(point, seconds=1.0):
    """Human wrist already resting at the given point"""
    t = np.arange(int(seconds * 120)) / 120.0
    meta = TrialMeta(trial_id="still", cup=CupContent.EMPTY)
    return Trajectory(t, np.repeat(np.asarray(point, dtype=float)[None, :], len(t), axis=0), meta)


def walk_in_trajectory(start, end, seconds=1.0, hold=0.5):
    """Human wrist moving at constant speed from start to end, then holding"""
    t = np.arange(int((seconds + hold) * 120)) / 120.0
    frac = np.clip(t / seconds, 0.0, 1.0)[:, None]
    pos = np.asarray(start, dtype=float) + frac * (np.asarray(end, dtype=float) - np.asarray(start, dtype=float))
    return Trajectory(t, pos, TrialMeta(trial_id="walk", cup=CupContent.FULL))


class TestControllers(unittest.TestCase):
    """Unit tests for the neutral and expressive velocity commands"""

    def setUp(self):
        """Set up a pure proportional spec"""
        self.spec = NeutralSpec(k_p=2.0, v_const=0.4, accel_limit=None)
        self.origin = EndEffectorState.at_rest((0.0, 0.0, 0.0))

    def test_neutral_at_target(self):
        """Test that the command vanishes at the target"""
        np.testing.assert_array_equal(neutral_command(self.origin, (0, 0, 0), self.spec), np.zeros(3))

    def test_neutral_saturated(self):
        """Test the saturated regime"""
        cmd = neutral_command(self.origin, (1.0, 0.0, 0.0), self.spec)
        np.testing.assert_allclose(cmd, (0.4, 0.0, 0.0))

    def test_neutral_proportional(self):
        """Test the proportional regime"""
        cmd = neutral_command(self.origin, (0.0, 0.1, 0.0), self.spec)
        np.testing.assert_allclose(cmd, (0.0, 0.2, 0.0))

    def test_neutral_slew_limit(self):
        """Test that the acceleration limit bounds the change per tick"""
        spec = NeutralSpec(k_p=6.0, v_const=0.25, accel_limit=2.0)
        cmd = neutral_command(self.origin, (1.0, 0.0, 0.0), spec, dt=DT)
        self.assertAlmostEqual(np.linalg.norm(cmd), 2.0 * DT)

    def test_neutral_converges_monotonically(self):
        """Test that the distance shrinks every tick until within 1 mm"""
        state = EndEffectorState.at_rest((0.0, 0.0, 0.0))
        target = np.array([0.3, 0.2, -0.1])
        spec = NeutralSpec()
        distance = np.linalg.norm(target - state.pos)
        for _ in range(1000):
            if distance < 1e-3:
                break
            state = step_end_effector(state, neutral_command(state, target, spec, DT), DT)
            new_distance = np.linalg.norm(target - state.pos)
            self.assertLess(new_distance, distance)
            distance = new_distance
        self.assertLess(distance, 1e-3)

    def test_expressive_starts_at_rest(self):
        """Test that the expressive command is zero at elapsed 0"""
        profile = min_jerk(MinJerkParams(0.6, 2.0))
        cmd = expressive_command(self.origin, (0, 0, 0), (0.6, 0, 0), profile, 0.0)
        np.testing.assert_array_equal(cmd, np.zeros(3))

    def test_expressive_peak(self):
        """Test the min-jerk peak at half the duration"""
        profile = min_jerk(MinJerkParams(0.6, 2.0))
        cmd = expressive_command(self.origin, (0, 0, 0), (0, 0.6, 0), profile, 1.0)
        np.testing.assert_allclose(cmd, (0.0, 1.875 * 0.6 / 2.0, 0.0), atol=1e-6)

    def test_expressive_displacement_matches_path(self):
        """Test that integrating the command covers a longer path"""
        profile = min_jerk(MinJerkParams(0.6, 1.5))
        start, end = np.zeros(3), np.array([1.2, 0.0, 0.0])
        state = EndEffectorState.at_rest(start)
        for k in range(int(np.ceil(2 * 1.5 / DT)) + 1):
            state = step_end_effector(state, expressive_command(state, start, end, profile, k * DT), DT)
        self.assertLess(abs(state.pos[0] - 1.2), 1e-3)
        np.testing.assert_array_equal(expressive_command(state, start, end, profile, 10.0), np.zeros(3))

    def test_expressive_zero_length_path(self):
        """Test that a zero-length path is rejected"""
        with self.assertRaises(InvalidPathError):
            expressive_command(self.origin, (1, 1, 1), (1, 1, 1), min_jerk(MinJerkParams(1, 1)), 0.1)


class TestStepAndSpill(unittest.TestCase):
    """Unit tests for Euler integration and the spill proxy"""

    def test_euler_step(self):
        """Test a single step at 40 Hz"""
        state = step_end_effector(EndEffectorState.at_rest((0, 0, 0)), (0.4, 0, 0), DT)
        np.testing.assert_allclose(state.pos, (0.01, 0, 0))
        self.assertAlmostEqual(state.t, DT)

    def test_zero_command(self):
        """Test that a zero command only advances time"""
        start = EndEffectorState.at_rest((0.2, 0.3, 0.4), t=1.0)
        state = step_end_effector(start, np.zeros(3), DT)
        np.testing.assert_array_equal(state.pos, start.pos)
        self.assertAlmostEqual(state.t, 1.0 + DT)

    def test_speed_cap(self):
        """Test that commands above the cap are scaled down"""
        state = step_end_effector(EndEffectorState.at_rest((0, 0, 0)), (3.0, 0, 0), DT)
        self.assertAlmostEqual(np.linalg.norm(state.vel), 1.5)
        self.assertAlmostEqual(state.pos[0], 1.5 * DT)

    def test_constant_velocity_does_not_spill(self):
        """Test that zero acceleration never spills"""
        trace = [EndEffectorState((k * 0.01, 0, 0), (0.4, 0, 0), k * DT, CupContent.FULL) for k in range(20)]
        self.assertFalse(check_spill(trace))

    def test_step_change_spills(self):
        """Test that a jump to 1.5 m/s in one tick spills"""
        trace = [EndEffectorState((0, 0, 0), (0, 0, 0), 0.0, CupContent.FULL),
                 EndEffectorState((0.0375, 0, 0), (1.5, 0, 0), DT, CupContent.FULL)]
        self.assertTrue(check_spill(trace))
        self.assertFalse(check_spill(trace, cup=CupContent.EMPTY))

    def test_careful_min_jerk_does_not_spill(self):
        """Test a careful min-jerk transport against the spill bound"""
        profile = min_jerk(MinJerkParams(0.6, 2.32))
        start, end = np.zeros(3), np.array([0.6, 0, 0])
        state = EndEffectorState(start, np.zeros(3), 0.0, CupContent.FULL)
        trace = [state]
        for k in range(int(2.32 / DT) + 2):
            state = step_end_effector(state, expressive_command(state, start, end, profile, k * DT), DT)
            trace.append(state)
        self.assertFalse(check_spill(trace))


class TestHandoverSimulator(unittest.TestCase):
    """Unit tests for the handover state machine"""

    def setUp(self):
        """Set up a simulator with default geometry and a signal spy"""
        self.sim = HandoverSimulator()
        self.zone = np.array(self.sim.geometry.handover_zone)
        self.emitted = []
        self.sim.state_changed.connect(lambda trial_id, state: self.emitted.append((trial_id, state)))

    def human(self):
        return walk_in_trajectory(self.zone + [0.4, 0.0, 0.0], self.zone + [0.01, 0.0, 0.0])

    def test_state_sequences(self):
        """Test the visited states for both cup contents"""
        for cup in CupContent:
            with self.subTest(cup=cup):
                metrics = self.sim.run_trial(cup, Condition.NEU, self.human())
                self.assertEqual(tuple(metrics.states), STATE_SEQUENCE[cup])

    def test_state_signal_emitted(self):
        """Test that every transition is signalled"""
        self.sim.run_trial(CupContent.EMPTY, Condition.EXP, self.human(), trial_id="t-1")
        self.assertEqual(self.emitted, [("t-1", s.value) for s in STATE_SEQUENCE[CupContent.EMPTY]])

    def test_full_cup_does_not_spill(self):
        """Test both controllers with a full cup"""
        for condition in Condition:
            with self.subTest(condition=condition):
                metrics = self.sim.run_trial(CupContent.FULL, condition, self.human())
                self.assertFalse(metrics.spill)
                self.assertLess(metrics.max_accel_full, 2.5)

    def test_pour_completes_before_release(self):
        """Test that a full cup is poured for the whole dwell before release"""
        metrics = self.sim.run_trial(CupContent.FULL, Condition.NEU, self.human())
        pour_rows = [r for r in metrics.trace if r.state is HandoverState.POUR]
        self.assertEqual(len(pour_rows), 80)
        self.assertTrue(all(r.holding is CupContent.FULL for r in pour_rows))
        self.assertIsNone(metrics.trace[-1].holding)
        self.assertIs(metrics.trace[-1].state, HandoverState.RELEASE)

    def test_expressive_segments_cover_paths(self):
        """Test the expressive displacement against the segment lengths"""
        metrics = self.sim.run_trial(CupContent.FULL, Condition.EXP, self.human())
        self.assertEqual(len(metrics.segment_errors), 2)
        self.assertTrue(all(error <= 1e-3 for error in metrics.segment_errors))

    def test_busy_time_directions(self):
        """Test that expressive is faster for empty cups and slower for full ones"""
        busy = {(cup, condition): self.sim.run_trial(cup, condition, self.human()).busy_time
                for cup in CupContent for condition in Condition}
        self.assertLess(busy[CupContent.EMPTY, Condition.EXP], busy[CupContent.EMPTY, Condition.NEU])
        self.assertLess(busy[CupContent.FULL, Condition.NEU], busy[CupContent.FULL, Condition.EXP])

    def test_deterministic(self):
        """Test that identical inputs give identical metrics"""
        first = self.sim.run_trial(CupContent.FULL, Condition.EXP, self.human())
        second = self.sim.run_trial(CupContent.FULL, Condition.EXP, self.human())
        self.assertEqual(first.to_json(), second.to_json())

    def test_state_trace_table(self):
        """Test the exported state trace columns and states"""
        metrics = self.sim.run_trial(CupContent.FULL, Condition.NEU, self.human())
        frame = metrics.trace_frame()
        self.assertEqual(list(frame.columns), ["t", "x", "y", "z", "vx", "vy", "vz", "state", "holding"])
        self.assertEqual(len(frame), len(metrics.trace))
        self.assertEqual(frame["state"].iloc[0], "waiting_human")
        self.assertEqual(frame["holding"].iloc[-1], "")
        self.assertTrue((frame["t"].diff().dropna() >= 0).all())

    def test_handover_time_follows_human(self):
        """Test that the grasp happens once the wrist enters the trigger distance"""
        metrics = self.sim.run_trial(CupContent.EMPTY, Condition.NEU, self.human())
        # the wrist covers 0.39 m in 1 s and must come within 0.05 m of the gripper
        self.assertAlmostEqual(metrics.handover_time, 0.9, delta=2 * DT)

    def test_timeout(self):
        """Test that a wrist that never arrives times out"""
        far = still_trajectory(self.zone + [1.0, 0.0, 0.0])
        with self.assertRaises(HandoverTimeoutError):
            self.sim.run_trial(CupContent.EMPTY, Condition.NEU, far)

    def test_attached_classifier_is_diagnostic(self):
        """Test that attaching a classifier leaves the robot motion unchanged"""
        plain = self.sim.run_trial(CupContent.FULL, Condition.NEU, self.human())
        attached_sim = HandoverSimulator(models=(-2.0, -0.5))
        attached = attached_sim.run_trial(CupContent.FULL, Condition.NEU, self.human())
        self.assertEqual((plain.handover_ticks, plain.busy_ticks), (attached.handover_ticks, attached.busy_ticks))
        self.assertIsNotNone(attached.decision)
        self.assertIsNone(plain.decision)

    def test_attached_classifier_speed_matches_offline(self):
        """Test that the simulator feeds the same speeds as classify_online"""
        cfg = ClassifierConfig(filter_cutoff_hz=None)
        attached_sim = HandoverSimulator(models=(-2.0, -0.5), classifier_cfg=cfg)
        human = self.human()
        _, feed = attached_sim._attach_classifier(human, self.zone)
        expected = derivative(distance_series(human, self.zone)).value
        np.testing.assert_allclose([speed for _, _, speed in feed], expected, atol=1e-12)
        self.assertAlmostEqual(feed[0][2], -0.39, delta=1e-9)


class TestBlocks(unittest.TestCase):
    """Unit tests for blocks and the net-time metric"""

    def setUp(self):
        """Set up a simulator and a synthetic human source"""
        self.sim = HandoverSimulator()
        self.source = human_trial_source(SynthConfig(), self.sim.geometry, seed=5)
        self.cups = [CupContent.EMPTY, CupContent.FULL, CupContent.FULL, CupContent.EMPTY]

    def test_hand_constructed_log(self):
        """Test the net time of a 60 s log with four 3 s robot segments"""
        events = [(0.0, 12.0, "human"), (12.0, 15.0, "robot"), (15.0, 27.0, "human"), (27.0, 30.0, "robot"),
                  (30.0, 42.0, "human"), (42.0, 45.0, "robot"), (45.0, 57.0, "human"), (57.0, 60.0, "robot")]
        self.assertEqual(net_time_from_log(events), (60.0, 48.0, 12.0))

    def test_unbalanced_block(self):
        """Test that blocks need two empty and two full cups"""
        with self.assertRaises(BlockPreconditionError):
            self.sim.run_block(self.cups[:3], Condition.NEU, self.source)
        with self.assertRaises(BlockPreconditionError):
            self.sim.run_block([CupContent.FULL] * 4, Condition.NEU, self.source)

    def test_net_time_equal_across_conditions(self):
        """Test that the net human time does not depend on the robot controller"""
        neu = self.sim.run_block(self.cups, Condition.NEU, self.source)
        exp = self.sim.run_block(self.cups, Condition.EXP, self.source)
        self.assertEqual(neu.net_ticks, exp.net_ticks)
        self.assertNotEqual(neu.busy_ticks, exp.busy_ticks)

    def test_net_time_identity(self):
        """Test total = net + robot busy time over randomized blocks"""
        rng = np.random.default_rng(0)
        for index in range(100):
            trials = [TrialMetrics(f"t{i}", cup, Condition.NEU, int(rng.integers(20, 400)),
                                   int(rng.integers(50, 400)), 40.0, False) for i, cup in enumerate(balanced_sequence(rng))]
            block = BlockMetrics(f"b{index}", Condition.NEU, trials, [int(v) for v in rng.integers(0, 80, 4)], 40.0)
            self.assertEqual(block.total_ticks, block.net_ticks + sum(t.busy_ticks for t in trials))
            total, net, robot = net_time_from_log(block.events())
            self.assertAlmostEqual(total, block.total_time, places=9)
            self.assertAlmostEqual(net, block.net_human_time, places=9)

    def test_block_events_cover_total(self):
        """Test that the block event log spans the total duration"""
        block = self.sim.run_block(self.cups, Condition.EXP, self.source, latency=1.5)
        total, net, robot = net_time_from_log(block.events())
        self.assertAlmostEqual(total, block.total_time, places=9)
        self.assertAlmostEqual(robot, block.robot_time, places=9)
        self.assertEqual(len(block.to_json()["trials"]), 4)

    def test_balanced_sequence(self):
        """Test that generated sequences hold two cups of each kind"""
        rng = np.random.default_rng(3)
        for _ in range(10):
            cups = balanced_sequence(rng)
            self.assertEqual(cups.count(CupContent.FULL), 2)
            self.assertEqual(cups.count(CupContent.EMPTY), 2)

    def test_specs_validate(self):
        """Test the default specs and geometry"""
        self.assertAlmostEqual(ExpressiveSpec().validate().careful.integral(), 0.5, places=9)
        with self.assertRaises(UsageError):
            TaskGeometry(bucket=(0.45, 0.0, 0.25)).validate()


if __name__ == "__main__":
    unittest.main()
