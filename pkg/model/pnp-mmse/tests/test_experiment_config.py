from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from errors import ConfigurationError
from experiment_config import ExperimentConfig, load_config, read_config_file


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.env"
    path.write_text(
        "# desk run\n"
        "SEED=7\n"
        "N=256\n"
        "RATES=0.3,0.5\n"
        "SOLVERS=pnp,gamp\n"
        "OUT=runs/a\n"
        "GAMMA=auto\n"
    )
    return path


@pytest.mark.unit
class TestExperimentConfig:
    """Test defaults and validation"""

    def test_defaults(self):
        """Test desk-scale defaults"""
        config = ExperimentConfig()
        assert (config.seed, config.n, config.trials, config.max_iter) == (0, 1024, 20, 500)
        assert config.measurement_rates == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        assert config.solvers == ["pnp", "lasso", "gamp"]
        assert config.gamma is None
        assert config.output_dir == Path("results")

    def test_default_grids(self):
        """Test 15 lambda and 9 sigma points, logarithmically spaced"""
        config = ExperimentConfig()
        assert len(config.lambda_grid) == 15
        assert config.lambda_grid[0] == pytest.approx(1e-4)
        assert config.lambda_grid[-1] == pytest.approx(1.0)
        np.testing.assert_allclose(config.sigma_grid, np.geomspace(0.01, 0.37, 9))

    def test_comma_separated_lists(self):
        """Test list fields accept comma-separated strings"""
        config = ExperimentConfig(measurement_rates="0.3, 0.8", solvers="gamp,pnp", sigma_grid="0.1,0.2")
        assert config.measurement_rates == [0.3, 0.8]
        assert config.solvers == ["pnp", "gamp"]
        assert config.sigma_grid == [0.1, 0.2]

    def test_unsorted_rates_rejected(self):
        """Test rates must be ascending"""
        with pytest.raises(ValidationError):
            ExperimentConfig(measurement_rates=[0.5, 0.3])

    @pytest.mark.parametrize("rate", [0.0, 1.2])
    def test_rate_out_of_range_rejected(self, rate):
        """Test rates must lie in (0, 1]"""
        with pytest.raises(ValidationError):
            ExperimentConfig(measurement_rates=[rate])

    def test_empty_solver_set_rejected(self):
        """Test at least one solver is required"""
        with pytest.raises(ValidationError):
            ExperimentConfig(solvers="")

    def test_unknown_solver_rejected(self):
        """Test solver names are checked"""
        with pytest.raises(ValidationError):
            ExperimentConfig(solvers="pnp,fista")

    def test_empty_grid_for_enabled_solver_rejected(self):
        """Test an enabled solver needs a nonempty grid"""
        with pytest.raises(ValidationError):
            ExperimentConfig(solvers="lasso", lambda_grid=[])

    def test_empty_grid_for_disabled_solver_allowed(self):
        """Test grids of disabled solvers may be empty"""
        assert ExperimentConfig(solvers="gamp", lambda_grid=[], sigma_grid=[]).solvers == ["gamp"]

    def test_unknown_key_rejected(self):
        """Test typos in keys are caught"""
        with pytest.raises(ValidationError):
            ExperimentConfig(trails=3)

    def test_measurements(self):
        """Test m = round(rate * n), at least one"""
        config = ExperimentConfig(n=1024)
        assert config.measurements(0.8) == 819
        assert ExperimentConfig(n=3).measurements(0.1) == 1

    def test_prior_uses_alpha(self):
        """Test the prior carries the configured sparsity"""
        assert ExperimentConfig(alpha=0.1).prior.variance == pytest.approx(1.0)


@pytest.mark.unit
class TestLoadConfig:
    """Test the config file and override precedence"""

    def test_reads_file_with_aliases(self, config_file):
        """Test keys are case-insensitive and aliases map to fields"""
        values = read_config_file(config_file)
        assert values["measurement_rates"] == "0.3,0.5"
        assert values["output_dir"] == "runs/a"

    def test_file_values_applied(self, config_file):
        """Test the file overrides the model defaults"""
        config = load_config(config_file)
        assert (config.seed, config.n) == (7, 256)
        assert config.measurement_rates == [0.3, 0.5]
        assert config.solvers == ["pnp", "gamp"]
        assert config.output_dir == Path("runs/a")

    def test_overrides_beat_file(self, config_file):
        """Test explicit overrides win and None means unset"""
        config = load_config(config_file, overrides={"n": 128, "seed": None})
        assert (config.seed, config.n) == (7, 128)

    def test_paper_scale_between_file_and_overrides(self, config_file):
        """Test --paper-scale beats the file but not explicit flags"""
        config = load_config(config_file, overrides={"trials": 3}, paper_scale=True)
        assert (config.n, config.trials) == (4096, 3)

    def test_command_defaults_below_file(self, config_file):
        """Test command defaults only fill what the file leaves open"""
        assert load_config(None, defaults={"measurement_rates": [0.8]}).measurement_rates == [0.8]
        assert load_config(config_file, defaults={"measurement_rates": [0.8]}).measurement_rates == [0.3, 0.5]

    def test_missing_file(self, tmp_path):
        """Test a missing config file is a configuration error"""
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.env")

    def test_invalid_value_becomes_configuration_error(self):
        """Test validation errors surface as ConfigurationError"""
        with pytest.raises(ConfigurationError):
            load_config(overrides={"solvers": ""})

    def test_unknown_file_key(self, tmp_path):
        """Test unknown keys in the file are rejected"""
        path = tmp_path / "bad.env"
        path.write_text("ITERATIONS=10\n")
        with pytest.raises(ConfigurationError):
            load_config(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
