import pytest

from services.check_service import CheckService


class TestCheckService:
    def test_unknown_fault(self):
        with pytest.raises(ValueError):
            CheckService(fault="logdet_sign")

    def test_structured_algebra_passes(self):
        results = {r.name: r for r in CheckService(seed=3).structured_algebra()}
        assert results["smw_quadratic"].passed and results["determinant_lemma"].passed

    def test_injected_fault_is_caught(self):
        results = {r.name: r for r in CheckService(fault="smw_sign").structured_algebra()}
        assert not results["smw_quadratic"].passed
        assert results["determinant_lemma"].passed

    def test_schedule_and_reduction_checks(self):
        service = CheckService()
        checks = service.schedule_identities() + service.zero_hessian_reduction() + service.mmd_units()
        assert all(c.passed for c in checks)

    def test_moment_exactness_records_deviation(self):
        service = CheckService()
        (result,) = service.moment_exactness()
        assert result.passed
        assert service.max_moment_deviation == result.value
