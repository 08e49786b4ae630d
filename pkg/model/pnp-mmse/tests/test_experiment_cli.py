import pandas as pd
import pytest

from errors import NumericalFailure
from experiment_cli import (
    EXIT_CONFIG,
    EXIT_FAILURE_BUDGET,
    EXIT_OK,
    EXIT_VALIDATION,
    build_parser,
    main,
    overrides_from,
)

SMALL = ["--n", "32", "--trials", "2", "--max-iter", "15", "--no-progress", "--quiet"]


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv("PNP_MMSE_CONFIG", raising=False)
    monkeypatch.setattr("experiment_cli.load_dotenv", lambda: None)


@pytest.mark.unit
class TestParser:
    """Test argument parsing"""

    def test_subcommand_required(self):
        """Test running without a subcommand is a usage error"""
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args([])
        assert info.value.code == 2

    def test_flags_map_to_config_fields(self):
        """Test CLI flags become config overrides"""
        args = build_parser().parse_args(["sweep", "--rates", "0.3,0.8", "--max-iter", "50", "--out", "x", "--seed", "4"])
        overrides = overrides_from(args)
        assert overrides["measurement_rates"] == "0.3,0.8"
        assert overrides["max_iter"] == 50
        assert overrides["output_dir"] == "x"
        assert overrides["seed"] == 4
        assert overrides["alpha"] is None

    def test_allow_large_step_flag(self):
        """Test --allow-large-step sets the override only when given"""
        parser = build_parser()
        assert overrides_from(parser.parse_args(["converge", "--gamma", "5", "--allow-large-step"]))["allow_large_step"] is True
        assert overrides_from(parser.parse_args(["converge"]))["allow_large_step"] is None

    def test_verbose_and_quiet_are_exclusive(self):
        """Test -v and -q cannot be combined"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["validate", "-v", "-q"])


@pytest.mark.integration
class TestMain:
    """Test exit codes and outputs of the subcommands"""

    def test_converge_writes_files(self, tmp_path):
        """Test converge defaults to rate 0.8 and writes its CSVs"""
        code = main(["converge", *SMALL, "--solvers", "pnp,lasso", "--out", str(tmp_path)])
        assert code == EXIT_OK
        selections = pd.read_csv(tmp_path / "selections.csv")
        assert set(selections.rate) == {0.8}
        assert (tmp_path / "convergence_cost.csv").exists()
        assert (tmp_path / "convergence_snr.csv").exists()

    def test_sweep_writes_file(self, tmp_path):
        """Test sweep over two rates"""
        code = main(["sweep", *SMALL, "--rates", "0.5,0.9", "--solvers", "gamp", "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert len(pd.read_csv(tmp_path / "rate_sweep.csv")) == 2

    def test_empty_solver_set_is_configuration_error(self, tmp_path):
        """Test an empty solver set fails before any computation"""
        assert main(["sweep", *SMALL, "--solvers", "", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert not (tmp_path / "rate_sweep.csv").exists()

    def test_converge_with_two_rates_is_configuration_error(self, tmp_path):
        """Test converge needs a single rate"""
        assert main(["converge", *SMALL, "--rates", "0.5,0.8", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_step_above_bound_is_configuration_error(self, tmp_path):
        """Test an explicit step larger than 1/L is refused"""
        assert main(["converge", *SMALL, "--solvers", "pnp", "--gamma", "50", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_allow_large_step_reaches_the_config(self, tmp_path, mocker):
        """Test a step above 1/L passes configuration when explicitly allowed"""
        run = mocker.patch("experiment_cli.run_convergence_experiment", return_value={})
        code = main(["converge", *SMALL, "--gamma", "50", "--allow-large-step", "--out", str(tmp_path)])
        assert code == EXIT_OK
        config = run.call_args.args[0]
        assert config.gamma == 50.0
        assert config.allow_large_step

    @pytest.mark.slow
    def test_validate_with_large_step_skips_monotonicity(self, tmp_path):
        """Test the monotonicity check is skipped, not failed, above 1/L"""
        code = main(["validate", "--gamma", "10", "--allow-large-step", "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_OK
        table = pd.read_csv(tmp_path / "validation.csv").set_index("check")
        assert table.loc["monotonicity", "status"] == "SKIPPED"

    def test_config_file_from_environment(self, tmp_path, monkeypatch):
        """Test the config file path can come from the environment"""
        path = tmp_path / "run.env"
        path.write_text(f"SOLVERS=gamp\nRATES=0.4,0.6\nOUT={tmp_path / 'env-out'}\n")
        monkeypatch.setenv("PNP_MMSE_CONFIG", str(path))
        assert main(["sweep", *SMALL]) == EXIT_OK
        assert (tmp_path / "env-out" / "rate_sweep.csv").exists()

    def test_failure_budget_exit_code(self, tmp_path, mocker):
        """Test exceeding the failed-trial budget exits with code 3"""
        mocker.patch("experiments.pnp_ista", side_effect=NumericalFailure("non-finite iterate", 2))
        assert main(["converge", *SMALL, "--solvers", "pnp", "--out", str(tmp_path)]) == EXIT_FAILURE_BUDGET

    def test_validate_corrupted_tolerance_exits_one(self, tmp_path):
        """Test a failed check gives exit code 1 and is listed in validation.csv"""
        path = tmp_path / "strict.env"
        path.write_text("TWEEDIE_TOL=1e-30\n")
        code = main(["validate", "--config", str(path), "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_VALIDATION
        table = pd.read_csv(tmp_path / "validation.csv")
        assert table.set_index("check").loc["tweedie", "status"] == "FAIL"

    @pytest.mark.slow
    def test_validate_default_passes(self, tmp_path):
        """Test the full suite passes on a fresh checkout"""
        assert main(["validate", "--out", str(tmp_path), "--quiet"]) == EXIT_OK
        assert (pd.read_csv(tmp_path / "validation.csv").status != "FAIL").all()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
