import warnings

import numpy as np
import pytest

from mlas.data import Dataset
from mlas.fusion import init_fusion


def tiny_dataset(seed=0, n=6, u=3, r=4, t_max=5):
    rng = np.random.default_rng(seed)
    items = [f"e{i}" for i in range(r)]
    records = []
    for k in range(n):
        length = int(rng.integers(1, t_max + 1))
        seq = [items[j] for j in rng.integers(0, r, size=length)]
        records.append((f"s{k}", rng.normal(size=u).tolist(), seq))
    # make sure every item occurs so r is fixed
    records.append(("all", rng.normal(size=u).tolist(), items))
    return Dataset.from_records(records)


def small_model(variant, dataset, seed=0, activation="tanh"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        units = [4] if variant != "seq_centric" else [3, 5]
        return init_fusion(variant, dataset.u, dataset.r, units, 5, output=4, activation=activation, seed=seed)


@pytest.fixture
def dataset():
    return tiny_dataset()


VARIANTS = ["balanced", "att_centric", "seq_centric"]


# -- acceptance summary ---------------------------------------------------------
# Tests marked ``criterion(n, title)`` are folded into one PASS/FAIL line per
# criterion at the end of the run; parametrised parts must all pass.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    detail = dict(item.user_properties).get("detail")
    if detail:
        entry["details"].append(detail)
    elif rep.failed:
        entry["details"].append(f"{item.name} errored")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        verdict = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {entry['title']}")
        for detail in entry["details"]:
            terminalreporter.write_line(f"    {detail}")
