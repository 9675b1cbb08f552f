"""Scenario configuration, orchestration, safety checking, reports and chain dumps."""
from .compare import Comparison, compare, tabulate
from .config import ScenarioConfig, config_hash, defaults, load_config, parse_config
from .dump import DumpError, VerifyResult, dump_chain, load_dump, verify_chain, verify_dump
from .run import report, report_json, run_scenario, simulate, summary_csv
from .safety import SafetyReport, check_safety

__all__ = [
    "Comparison", "compare", "tabulate", "ScenarioConfig", "config_hash", "defaults", "load_config",
    "parse_config", "DumpError", "VerifyResult", "dump_chain", "load_dump", "verify_chain",
    "verify_dump", "report", "report_json", "run_scenario", "simulate", "summary_csv",
    "SafetyReport", "check_safety",
]
