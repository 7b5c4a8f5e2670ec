import pytest

from orderflow import presets, tokenizer


@pytest.fixture(scope="session")
def universe_small():
    return presets.universe(n_events=600)


@pytest.fixture(scope="session")
def schema(universe_small):
    return tokenizer.calibrate(universe_small)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
