import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One visible pass/fail line per acceptance criterion."""
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__ == "test_acceptance":
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        print(f"\n[ACCEPTANCE] {item.name}: {status}")
