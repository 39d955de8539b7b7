import numpy as np
import pytest

from pefnn import kernels
from pefnn.errors import ConfigError, GradcheckFailure
from pefnn.gradcheck import GradcheckConfig, LossPath, gradcheck
from pefnn.kernels import KernelMode, KernelParams
from pefnn.network import Integrator, ModelConfig


def tiny_model() -> ModelConfig:
    return ModelConfig(
        layers=2, width=3, modes=2, integrator=Integrator.RK3, pad=1, dt=0.5
    )


def test_backward_matches_finite_differences() -> None:
    report = gradcheck(tiny_model(), GradcheckConfig(slots=50))

    assert report.passed, report.results
    assert set(report.by_mode()) == set(KernelMode)
    assert {result.path for result in report.results} == set(LossPath)
    assert {result.group_size for result in report.results} == {1, 4}
    assert all(result.slots >= 50 for result in report.results)


def test_corrupted_adjoint_is_caught(monkeypatch: pytest.MonkeyPatch) -> None:
    backward = kernels.materialize_backward

    def corrupted(
        params: KernelParams, cotangent: kernels.MaterializedKernel
    ) -> np.ndarray:
        return 1.1 * backward(params, cotangent)

    monkeypatch.setattr(kernels, "materialize_backward", corrupted)
    report = gradcheck(tiny_model(), GradcheckConfig(slots=50, group_sizes=(1,)))

    assert not report.passed
    assert "kernel" in max(report.results, key=lambda r: r.worst_error).worst_slot

    with pytest.raises(GradcheckFailure):
        report.raise_for_failure()


def test_config_validation() -> None:
    with pytest.raises(ConfigError):
        GradcheckConfig(eps=0.0)

    with pytest.raises(ConfigError):
        GradcheckConfig(rollout_steps=0)
