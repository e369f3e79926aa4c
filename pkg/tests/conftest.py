import pytest

# acceptance test name -> label printed in the terminal summary
CRITERIA = {
    "test_nesting_exact": "nesting exactness",
    "test_lstm_cell_oracle": "LSTM cell oracle",
    "test_conjugate_marginal_likelihood": "SMC marginal likelihood oracle",
    "test_two_route_posterior_agreement": "two-route posterior agreement",
    "test_parameter_recovery": "parameter recovery",
    "test_loss_function_consistency": "loss-function consistency",
    "test_var_es_numerical_integration": "VaR/ES numerical integration",
    "test_trading_zero_sum_and_dominance": "trading zero-sum and dominance",
    "test_mcs_size_and_power": "MCS size and power",
    "test_real_data_alignment": "real-data alignment (reported only)",
}

_results: dict[str, list] = {}


def _base(nodeid: str) -> str | None:
    if "test_acceptance.py::" not in nodeid:
        return None
    return nodeid.split("::")[-1].split("[")[0]


def pytest_runtest_logreport(report):
    name = _base(report.nodeid)
    if name not in CRITERIA:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _results.setdefault(name, []).append((status, report.nodeid.split("::")[-1], detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in CRITERIA.items():
        for status, node, detail in _results.get(name, []):
            tag = label if node == name else f"{label} {node[len(name):]}"
            terminalreporter.write_line(f"{status}  {tag}  {detail}".rstrip())


def pytest_collection_modifyitems(config, items):
    for item in items:
        if _base(item.nodeid) in CRITERIA:
            item.add_marker(pytest.mark.slow)
