import json
import logging
import shutil
import unittest
import uuid
from pathlib import Path
from unittest.mock import patch

from rae import config
from rae.infer import McmcConfig
from rae.pipeline import RunOptions


class SettingsOverrideTests(unittest.TestCase):
    def _make_temp_dir(self) -> Path:
        base = Path(f"tmp_rae_config_{uuid.uuid4().hex}")
        base.mkdir(parents=True, exist_ok=False)
        self.addCleanup(lambda: shutil.rmtree(base, ignore_errors=True))
        return base

    def _write(self, base: Path, payload) -> Path:
        path = base / "rae_settings.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def test_defaults_without_env(self):
        with patch.dict("os.environ", {config.CONFIG_ENV: ""}):
            settings = config.load_settings()
        self.assertEqual(settings.mcmc_chains, config.MCMC_CHAINS)
        self.assertEqual(settings.trait_gain, config.TRAIT_GAIN)

    def test_valid_keys_are_accepted(self):
        base = self._make_temp_dir()
        path = self._write(base, {"mcmc_chains": 2, "fdr_q": 0.1, "rules_path": str(config.RULE_TABLE_JSON)})
        with self.assertLogs("rae.config", level="INFO") as logs:
            settings = config.load_settings(path)
        self.assertEqual(settings.mcmc_chains, 2)
        self.assertEqual(settings.fdr_q, 0.1)
        self.assertTrue(any("OVERRIDE_ACCEPT key=mcmc_chains" in m for m in logs.output))

    def test_invalid_and_unknown_keys_are_dropped(self):
        base = self._make_temp_dir()
        path = self._write(base, {
            "mcmc_chains": 1,
            "hdi_mass": 1.0,
            "trait_gain": True,
            "rules_path": str(base / "absent.json"),
            "log_colour": "red",
        })
        with self.assertLogs("rae.config", level="WARNING") as logs:
            accepted = config.load_settings_overrides(path)
        self.assertEqual(accepted, {})
        joined = "\n".join(logs.output)
        self.assertIn("OVERRIDE_REJECT key=mcmc_chains reason=invalid_value", joined)
        self.assertIn("OVERRIDE_REJECT key=log_colour reason=not_allowed", joined)

    def test_non_object_file_is_ignored(self):
        base = self._make_temp_dir()
        path = self._write(base, [1, 2, 3])
        with self.assertLogs("rae.config", level="WARNING") as logs:
            self.assertEqual(config.load_settings_overrides(path), {})
        self.assertIn("reason=not_object", logs.output[0])

    def test_env_points_at_file(self):
        base = self._make_temp_dir()
        path = self._write(base, {"mcmc_warmup": 50, "mcmc_draws": 40, "ppc_draws": 0, "hdi_mass": 0.9})
        with patch.dict("os.environ", {config.CONFIG_ENV: str(path)}):
            settings = config.load_settings()
        options = RunOptions.from_settings(settings, seed=9)
        self.assertEqual(options.hdi_mass, 0.9)
        self.assertEqual(options.mcmc.hdi_mass, 0.9)
        self.assertEqual(options.mcmc.warmup_draws, 50)
        self.assertEqual(options.mcmc.post_warmup_draws, 40)
        self.assertEqual(options.mcmc.seed, 9)
        self.assertEqual(options.ppc_draws, 0)
        self.assertEqual(McmcConfig.from_settings(settings, 9, chains=3).chains, 3)


class LogOnceTests(unittest.TestCase):
    def test_second_call_is_silent(self):
        key = f"test-{uuid.uuid4().hex}"
        log = logging.getLogger("rae.test")
        with self.assertLogs("rae.test", level="WARNING") as logs:
            self.assertTrue(config.log_once(log, key, "FIRST_ONLY key=%s", key))
            self.assertFalse(config.log_once(log, key, "FIRST_ONLY key=%s", key))
        self.assertEqual(len(logs.output), 1)


if __name__ == "__main__":
    unittest.main()
