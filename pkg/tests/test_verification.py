import pytest
import numpy as np

from src.fem.quadrature import VERTEX_RULE, QuadRule
from src.verification import audits
from src.verification.audits import AUDITS, AuditResult, run_audits

PERTURBED_RULE = QuadRule(VERTEX_RULE.kind, VERTEX_RULE.points,
                          np.array([1.0 / 6.0 + 1e-3, 1.0 / 6.0, 1.0 / 6.0 - 1e-3]), 1)

FAST_AUDITS = ["bdm1-duality", "piola-flux", "sigma-exactness", "block-structure", "divergence-identity",
               "patch-exactness", "postprocess-l_h", "marking-minimality", "interface-flux"]


class TestAuditSuite:
    @pytest.mark.parametrize("audit_id", FAST_AUDITS)
    def test_audit_passes(self, audit_id):
        """Each audit passes on a fresh checkout."""
        [result] = run_audits(only=[audit_id])
        assert result.audit_id == audit_id
        assert result.passed, result.detail

    @pytest.mark.slow
    @pytest.mark.parametrize("audit_id", ["mesh-conformity", "sigma-bounds"])
    def test_refinement_audits(self, audit_id):
        """Audits over mesh sequences pass as well."""
        [result] = run_audits(only=[audit_id])
        assert result.passed, result.detail

    def test_order(self):
        """Results come back in the requested order."""
        results = run_audits(only=["marking-minimality", "bdm1-duality"])
        assert [r.audit_id for r in results] == ["marking-minimality", "bdm1-duality"]

    def test_unknown_audit(self):
        """Unknown ids raise KeyError."""
        with pytest.raises(KeyError):
            run_audits(only=["warp-drive"])

    def test_perturbed_rule_fails(self):
        """A perturbed vertex rule breaks the exactness audit."""
        [result] = run_audits(PERTURBED_RULE, only=["sigma-exactness"])
        assert not result.passed

    def test_raising_audit_fails(self, monkeypatch):
        """An audit that raises is reported as failed."""
        def broken(vertex_rule):
            raise RuntimeError("boom")

        monkeypatch.setitem(AUDITS, "bdm1-duality", broken)
        [result] = audits.run_audits(only=["bdm1-duality"])
        assert result == AuditResult("bdm1-duality", False, "RuntimeError: boom")

    def test_ids(self):
        """The suite exposes every audit under a stable id."""
        assert set(FAST_AUDITS) | {"mesh-conformity", "sigma-bounds"} == set(AUDITS)
