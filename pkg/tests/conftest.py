import numpy as np
import pytest

from bleedsense.sim import DatasetConfig, generate_dataset
from bleedsense.tinynn.estimator import TinyCNNClassifier


@pytest.fixture(scope="session")
def small_bundle():
    return generate_dataset(DatasetConfig(recordings_per_class=20, duration_s=36.0), master_seed=3)


@pytest.fixture(scope="session")
def small_model(small_bundle):
    X, y, _ = small_bundle.arrays("train", stride=3)
    Xv, yv, _ = small_bundle.arrays("val")
    return TinyCNNClassifier(max_epochs=4, random_state=0).fit(X, y, Xv, yv)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
    if rep.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        detail = f"  [{'; '.join(e['details'])}]" if e["details"] else ""
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'} {number:2d}. {e['title']}{detail}")
