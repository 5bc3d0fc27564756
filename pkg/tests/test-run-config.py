import json
import os
import tempfile
import unittest

from controllers.run_config import RunConfig
from models.classifier import UpdateRule
from models.errors import UsageError
from models.synth import DurationDistribution


class TestRunConfig(unittest.TestCase):
    """Unit tests for RunConfig loading and precedence"""

    def setUp(self):
        """Create a scratch directory"""
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.json")

    def tearDown(self):
        """Remove the scratch directory"""
        self.tmp.cleanup()

    def write(self, data):
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(data, f)

    def test_defaults_are_valid(self):
        """Test that the default configuration validates"""
        config = RunConfig().validate()
        self.assertEqual(config.train_seed, config.seed)
        self.assertNotEqual(config.eval_seed, config.train_seed)

    def test_file_values(self):
        """Test that nested sections are read from JSON"""
        self.write({
            "seed": 3,
            "synth": {"transport_duration_careful": [2.5, 0.4], "handover_location": [0.5, 0.1, 0.9]},
            "classifier": {"epsilon": 0.5, "update_rule": "shared_error"},
            "geometry": {"bucket": [0.4, 0.6, 0.25]},
            "expressive": {"careful": {"distance": 0.4, "duration": 3.0}},
        })
        config = RunConfig.from_json(self.path).validate()
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.synth.transport_duration_careful, DurationDistribution(2.5, 0.4))
        self.assertEqual(config.synth.handover_location, (0.5, 0.1, 0.9))
        self.assertEqual(config.classifier.update_rule, UpdateRule.SHARED_ERROR)
        self.assertEqual(config.geometry.bucket, (0.4, 0.6, 0.25))
        self.assertAlmostEqual(config.expressive.careful.duration, 3.0, places=9)
        self.assertAlmostEqual(config.expressive.careful.integral(), 0.4, places=9)

    def test_flags_override_file(self):
        """Test that flags win over file values and None flags are ignored"""
        self.write({"seed": 3, "n_per_label": 10, "classifier": {"epsilon": 0.5}})
        config = RunConfig.from_json(self.path).with_overrides(seed=9, n_per_label=None, epsilon=2.0)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.n_per_label, 10)
        self.assertEqual(config.classifier.epsilon, 2.0)

    def test_update_rule_flag(self):
        """Test that the update rule flag accepts the enum value"""
        config = RunConfig().with_overrides(update_rule="shared_error")
        self.assertIs(config.classifier.update_rule, UpdateRule.SHARED_ERROR)
        with self.assertRaises(UsageError):
            RunConfig().with_overrides(update_rule="bogus")

    def test_invalid_values(self):
        """Test that invalid values become usage errors"""
        cases = [
            {"n_per_label": 0},
            {"latency": -1.0},
            {"classifier": {"epsilon": 0.0}},
            {"classifier": {"filter_cutoff_hz": 100.0}},
            {"geometry": {"bucket": [0.45, 0.0, 0.25]}},
            {"sim": {"tick_hz": 0.0}},
        ]
        for data in cases:
            with self.subTest(data=data):
                self.write(data)
                with self.assertRaises(UsageError):
                    RunConfig.from_json(self.path).validate()

    def test_wrong_types(self):
        """Test that values of the wrong JSON type are usage errors"""
        cases = [
            {"seed": "7"},
            {"seed": 7.5},
            {"write_traces": "yes"},
            {"latency": True},
            {"classifier": {"epsilon": "fast"}},
            {"classifier": {"gate_speed": [0.2]}},
            {"synth": {"handover_location": [0.5, 0.1]}},
            {"synth": {"transport_duration_careful": {"mean": "2"}}},
            {"expressive": {"careful": {"distance": "far", "duration": 2.0}}},
        ]
        for data in cases:
            with self.subTest(data=data):
                self.write(data)
                with self.assertRaises(UsageError):
                    RunConfig.from_json(self.path)

    def test_numbers_and_nulls(self):
        """Test that integers count as numbers and optional values may be null"""
        self.write({"latency": 2, "classifier": {"epsilon": 5, "gate_speed": None, "filter_cutoff_hz": None}})
        config = RunConfig.from_json(self.path).validate()
        self.assertEqual(config.latency, 2.0)
        self.assertIsInstance(config.classifier.epsilon, float)
        self.assertIsNone(config.classifier.gate_speed)
        self.assertIsNone(config.classifier.filter_cutoff_hz)

    def test_unknown_keys(self):
        """Test that unknown keys are refused"""
        for data in ({"colour": "red"}, {"synth": {"colour": "red"}}, {"expressive": {"fast": {}}}):
            with self.subTest(data=data):
                self.write(data)
                with self.assertRaises(UsageError):
                    RunConfig.from_json(self.path)

    def test_bad_expressive_profile(self):
        """Test that an impossible expressive profile is a usage error"""
        self.write({"expressive": {"careful": {"distance": -1.0, "duration": 2.0}}})
        with self.assertRaises(UsageError):
            RunConfig.from_json(self.path)

    def test_missing_or_broken_file(self):
        """Test that unreadable config files are usage errors"""
        with self.assertRaises(UsageError):
            RunConfig.from_json(os.path.join(self.tmp.name, "missing.json"))
        with open(self.path, "w") as f:
            f.write("{not json")
        with self.assertRaises(UsageError):
            RunConfig.from_json(self.path)

    def test_dict_round_trip(self):
        """Test that to_dict output loads back to the same configuration"""
        config = RunConfig(seed=5, latency=0.5)
        again = RunConfig.from_dict(json.loads(json.dumps(config.to_dict())))
        self.assertEqual((again.seed, again.latency), (5, 0.5))
        self.assertEqual(again.geometry, config.geometry)
        self.assertEqual(again.sim, config.sim)
        self.assertAlmostEqual(again.expressive.careful.integral(), 0.5, places=9)
        self.assertEqual(again.synth, config.synth)
        self.assertEqual(again.classifier, config.classifier)


if __name__ == "__main__":
    unittest.main()
