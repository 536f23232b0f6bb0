from .audits import AUDITS, AuditResult, run_audits
