import numpy as np
import pandas as pd
import pytest

from errors import NumericalFailure
from experiment_config import ExperimentConfig
from mmse_denoiser import MmseDenoiser, RegularizerContext, denoise_scalar
from prior_bg import BernoulliGaussianPrior
from validation_suite import (
    FAIL,
    PASS,
    SKIPPED,
    CheckResult,
    ValidationReport,
    check_derivative,
    check_gamp_decoupled,
    check_gamp_noiseless,
    check_gamp_variances,
    check_gradients,
    check_inverse,
    check_jacobian,
    check_mm_sandwich,
    check_monotonicity,
    check_prox,
    check_tweedie,
    prox_grid_minimizer,
    run_validation_suite,
    tweedie_grid,
)


@pytest.fixture
def config(tmp_path):
    return ExperimentConfig(output_dir=tmp_path)


@pytest.mark.unit
class TestDenoiserChecks:
    """Test the scalar checks pass on the exact denoiser"""

    def test_tweedie(self):
        """Test the Tweedie identity check passes at 1e-9"""
        assert check_tweedie(1e-9).status == PASS

    def test_tweedie_with_corrupted_tolerance_fails(self):
        """Test an impossible tolerance exercises the failure path"""
        result = check_tweedie(1e-30)
        assert result.status == FAIL
        assert result.value > 0

    def test_jacobian(self):
        """Test positivity and expansiveness"""
        assert check_jacobian().status == PASS

    def test_derivative(self):
        """Test the derivative identities"""
        assert check_derivative().status == PASS

    def test_inverse(self):
        """Test inverse round trips"""
        assert check_inverse().status == PASS

    def test_tweedie_grid_scales_with_the_prior(self):
        """Test the grid spans +-10 (sigma_x + sigma)"""
        denoiser = MmseDenoiser(prior=BernoulliGaussianPrior(alpha=0.05), sigma=0.1)
        z = tweedie_grid(denoiser)
        reach = 10.0 * (denoiser.prior.sigma_x + 0.1)
        assert (z[0], z[-1]) == (pytest.approx(-reach), pytest.approx(reach))

    @pytest.mark.parametrize("alpha,sigma,gamma,z", [(0.2, 0.5, 0.7, 1.3), (0.05, 1.0, 1.5, -6.0), (0.9, 0.05, 0.2, 0.4)])
    def test_prox_grid_minimizer_finds_denoiser_output(self, alpha, sigma, gamma, z):
        """Test coarse-then-fine search lands within one fine step of D(z), away from the interval edge"""
        ctx = RegularizerContext(denoiser=MmseDenoiser(prior=BernoulliGaussianPrior(alpha=alpha), sigma=sigma), gamma=gamma)
        minimizer, on_edge = prox_grid_minimizer(ctx, z)
        assert not on_edge
        assert abs(minimizer - denoise_scalar(ctx.denoiser, z)) <= 1e-4

    def test_prox(self):
        """Test the proximal characterization on a reduced draw count"""
        assert check_prox(draws=20).status == PASS


@pytest.mark.unit
class TestSolverChecks:
    """Test the solver-level checks"""

    def test_gradients(self):
        """Test gradient oracles on tiny instances"""
        assert check_gradients(points=10).status == PASS

    def test_mm_sandwich(self):
        """Test the surrogate sandwich"""
        assert check_mm_sandwich(0.2, trajectories=2, iterations=30).status == PASS

    def test_monotonicity(self, config):
        """Test PnP-ISTA and LASSO objectives do not rise"""
        assert check_monotonicity(config, iterations=50).status == PASS

    def test_monotonicity_skipped_for_large_step(self, tmp_path):
        """Test a step above 1/L is reported as SKIPPED, not FAIL"""
        config = ExperimentConfig(gamma=10.0, output_dir=tmp_path)
        result = check_monotonicity(config)
        assert result.status == SKIPPED
        assert result.passed

    def test_gamp_variances(self, config):
        """Test GAMP keeps positive variances"""
        assert check_gamp_variances(config, iterations=30).status == PASS

    def test_gamp_decoupled(self):
        """Test GAMP with H = I reproduces the scalar estimate"""
        assert check_gamp_decoupled().status == PASS

    @pytest.mark.parametrize("alpha", [0.2, 1.0])
    def test_gamp_noiseless(self, alpha):
        """Test GAMP with H = I and no noise approaches y without flagging divergence"""
        result = check_gamp_noiseless(alpha)
        assert result.status == PASS, result.detail
        assert np.isfinite(result.value)


@pytest.mark.unit
class TestValidationReport:
    """Test report aggregation and output"""

    def test_exit_code(self):
        """Test any failure gives exit code 1; SKIPPED does not"""
        report = ValidationReport([CheckResult("a", PASS, 0.0), CheckResult("b", SKIPPED)])
        assert report.exit_code == 0
        report.results.append(CheckResult("c", FAIL, 1.0, 0.5))
        assert report.exit_code == 1
        assert [r.check for r in report.failures] == ["c"]

    def test_write_csv(self, tmp_path):
        """Test the machine-readable table"""
        report = ValidationReport([CheckResult("tweedie", PASS, 1e-16, 1e-9, "5 settings")])
        frame = pd.read_csv(report.write(tmp_path))
        assert frame.columns.tolist() == ["check", "status", "value", "tolerance", "detail"]
        assert frame.loc[0, "status"] == "PASS"


@pytest.mark.integration
class TestRunValidationSuite:
    """Test the full suite"""

    def test_default_config_passes(self, config):
        """Test every check passes with defaults"""
        report = run_validation_suite(config)
        assert report.exit_code == 0, report.to_frame().to_string()
        assert len(report.results) == 11

    def test_numerical_failure_becomes_failed_check(self, config, mocker):
        """Test an exception inside a check is reported, not raised"""
        mocker.patch("validation_suite.check_gamp_decoupled", side_effect=NumericalFailure("boom"))
        report = run_validation_suite(config)
        failed = {r.check for r in report.failures}
        assert failed == {"gamp_decoupled"}
        assert report.exit_code == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
