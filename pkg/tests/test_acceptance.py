"""Acceptance suite: one marked test group per criterion, summarised as PASS/FAIL lines.

Run with ``pytest tests/test_acceptance.py``; the summary appears at the end of
the pytest output under "acceptance criteria".
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from bleedsense import telemetry as tm
from bleedsense.cli import main
from bleedsense.energy import cycle_energy, load_cases, scenario_compare
from bleedsense.quant import QuantizedTinyCNN, footprint_report, load_qmodel, qforward
from bleedsense.sim import (
    DatasetBundle,
    FlowClass,
    InfusionScenario,
    NoiseModel,
    physics_check,
    run_recording,
    stack_windows,
    windowize,
    with_background,
)
from bleedsense.spectral import transmit
from bleedsense.tinynn.estimator import TinyCNNClassifier
from bleedsense.tinynn.metrics import evaluate
from bleedsense.tinynn.model import ModelParams, forward

from test_model import gradient_check
from test_telemetry import random_frame

criterion = pytest.mark.criterion


def _run(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"bleedsense {' '.join(map(str, argv))} exited {code}"


def _pipeline(root: Path) -> dict:
    """Default gen (seed 42) -> train -> quantize -> qeval through the CLI."""
    ds, tr, q, qe = root / "ds", root / "tr", root / "q", root / "qe"
    _run("gen", "--seed", 42, "--out", ds)
    start = time.perf_counter()
    _run("train", "--data", ds, "--out", tr)
    train_s = time.perf_counter() - start
    _run("quantize", "--data", ds, "--model", tr / "model.json", "--out", q)
    _run("qeval", "--data", ds, "--model", tr / "model.json", "--qmodel", q / "model.bsq8", "--out", qe)
    return {"root": root, "ds": ds, "tr": tr, "q": q, "qe": qe, "train_s": train_s}


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    return _pipeline(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture(scope="module")
def default_artifacts(default_run):
    bundle = DatasetBundle.load(default_run["ds"])
    clf = TinyCNNClassifier.load(default_run["tr"] / "model.json")
    qm = load_qmodel(default_run["q"] / "model.bsq8")
    return bundle, clf, qm


# -- 1, 2: energy -------------------------------------------------------------

@criterion(1, "duty-cycle energy table reproduction")
def test_c1_energy_table(record_property):
    start = time.perf_counter()
    cases = {c.name: c for c in load_cases()}
    s1, s2, s3 = (cycle_energy(cases[k]) for k in ("case1", "case2", "case3"))
    elapsed = time.perf_counter() - start
    assert s1.total_energy == pytest.approx(0.09144, rel=1e-3)
    assert s1.total_charge == pytest.approx(329.17, rel=1e-3)
    assert s3.total_energy == pytest.approx(1.09798, rel=1e-3)
    assert s3.total_charge == pytest.approx(3952.73, rel=1e-3)
    assert s2.total_energy == pytest.approx(5.13515, rel=0.02)
    assert s2.mismatch and not s1.mismatch and not s3.mismatch
    assert elapsed < 0.5
    record_property("detail", f"case1 {s1.total_energy:.5f} uAh/{s1.total_charge:.2f} uC, "
                              f"case3 {s3.total_energy:.5f} uAh/{s3.total_charge:.2f} uC, "
                              f"case2 off by {s2.relative_mismatch:.2%} (flagged)")


@criterion(2, "inference vs transmission trade-off")
def test_c2_energy_tradeoff(record_property):
    cases = {c.name: c for c in load_cases()}
    r = scenario_compare(cases["case1"], cases["case2"], 9, 1)
    assert r.energy_mixed == pytest.approx(5.96, abs=0.005)
    assert r.energy_all_tx == pytest.approx(51.35, abs=0.005)
    assert abs(r.reduction - 0.884) <= 0.001
    record_property("detail", f"{r.energy_mixed:.3f} vs {r.energy_all_tx:.3f} uAh, reduction {r.reduction:.2%}")


# -- 3, 4: network ------------------------------------------------------------

@criterion(3, "architecture shapes, parameter and MAC counts")
def test_c3_architecture(record_property):
    params = ModelParams.init(np.random.default_rng(0))
    _, cache = forward(params, np.random.default_rng(1).normal(size=(2, 6, 24)), capture=True)
    assert cache["pool1"].shape[1:] == (4, 3, 12)
    assert cache["pool2"].shape[1:] == (8, 1, 6)
    assert cache["flat"].shape[1:] == (48,)
    assert cache["fc1"].shape[1:] == (64,)
    assert cache["logits"].shape[1:] == (6,)
    fp = footprint_report(params)
    assert fp.param_count == 3862 == (36 + 4) + (288 + 8) + (3072 + 64) + (384 + 6)
    assert fp.macs == 19008 == 6 * 24 * 36 + 3 * 12 * 288 + 3072 + 384
    record_property("detail", f"params={fp.param_count}, MACs={fp.macs}")


@criterion(4, "analytic gradients vs central differences")
def test_c4_gradients(record_property):
    start = time.perf_counter()
    err, n = gradient_check()
    elapsed = time.perf_counter() - start
    assert n == 3862
    assert err < 1e-4
    assert elapsed < 60
    record_property("detail", f"max rel err {err:.2e} over {n} params in {elapsed:.1f} s")


# -- 5: classification ---------------------------------------------------------

@criterion(5, "classification on the default synthetic dataset")
def test_c5_classification(default_run, default_artifacts, record_property):
    bundle, clf, _ = default_artifacts
    X, y, _ = bundle.arrays("test")
    rep = evaluate(clf, X, y)
    assert rep.accuracy >= 0.95
    assert rep.interference_recall >= 0.99
    assert rep.non_adjacent_errors == 0
    assert default_run["train_s"] < 600
    record_property("detail", f"{rep.summary_line()}, non-adjacent errors {rep.non_adjacent_errors}, "
                              f"train {default_run['train_s']:.0f} s")


# -- 6, 7, 8: physics ----------------------------------------------------------

@criterion(6, "noise-free ch1/ch12 ratio physics")
def test_c6_physics(record_property):
    times, series, passed = physics_check()
    assert passed
    flat = series[FlowClass(0)]
    assert np.all(flat == flat[0])
    bleeding = [series[fc] for fc in FlowClass if fc.is_bleeding]
    for s in bleeding:
        assert np.all(np.diff(s) < 0)
    for lo, hi in zip(bleeding, bleeding[1:]):
        assert np.all(hi[1:] < lo[1:])
    record_property("detail", f"{len(bleeding)} bleeding series over {len(times)} samples")


@criterion(7, "Beer-Lambert transmittance composition")
def test_c7_beer_lambert(record_property):
    rng = np.random.default_rng(77)
    n = 10_000
    I0 = rng.uniform(1.0, 6e4, n)
    mu = rng.uniform(0.0, 2.0, n)
    c = rng.uniform(0.0, 5.0, n)
    L = rng.uniform(0.1, 5.0, n)
    t1 = transmit(I0, mu, c, L) / I0
    t2 = transmit(I0, mu, 2 * c, L) / I0
    rel = np.abs(t2 - t1**2) / (t1**2)
    assert rel.max() < 1e-12
    record_property("detail", f"max rel err {rel.max():.1e} over {n} draws")


@criterion(8, "medium invariance of network inputs")
def test_c8_medium_invariance(default_artifacts, record_property):
    _, clf, qm = default_artifacts
    sc = InfusionScenario(FlowClass(4), 0.7)
    factors = np.random.default_rng(8).uniform(0.5, 1.0, 24)
    quiet = NoiseModel.noiseless()
    Xa, _ = stack_windows(windowize(run_recording(with_background(sc, factors), noise=quiet)))
    Xb, _ = stack_windows(windowize(run_recording(with_background(sc, np.ones(24)), noise=quiet)))
    za, zb = clf.normalize(Xa), clf.normalize(Xb)
    dz = np.abs(za - zb).max()
    assert dz < 1e-9
    la, lb = clf.decision_function(Xa), clf.decision_function(Xb)
    dl = np.abs(la - lb).max()
    assert dl < 1e-9
    assert np.array_equal(la.argmax(1), lb.argmax(1))
    # float logits agree to round-off; the int8 path absorbs it and matches bit for bit
    q = QuantizedTinyCNN.from_qmodel(qm)
    assert q.decision_function(Xa).tobytes() == q.decision_function(Xb).tobytes()
    record_property("detail", f"max |dZ| {dz:.1e}, max float |dlogit| {dl:.1e}, int8 logits identical")


# -- 9: quantization -------------------------------------------------------------

@criterion(9, "int8 agreement and bit reproducibility")
def test_c9_int8_agreement(default_run, default_artifacts, record_property):
    summary = json.loads((default_run["qe"] / "qeval.json").read_text())
    assert summary["agreement"] >= 0.98
    record_property("detail", f"agreement {summary['agreement']:.4f}")


@criterion(9, "int8 agreement and bit reproducibility")
def test_c9_int8_bit_reproducible(default_artifacts):
    bundle, clf, qm = default_artifacts
    X, _, _ = bundle.arrays("test")
    xq = qm.quantize_input(qm.normalize(X))
    ref = qforward(qm, xq)[0].tobytes()
    with threadpool_limits(1):
        assert qforward(qm, xq)[0].tobytes() == ref
    with ThreadPoolExecutor(4) as pool:
        assert all(out == ref for out in pool.map(lambda _: qforward(qm, xq)[0].tobytes(), range(8)))
    chunks = [QuantizedTinyCNN.from_qmodel(qm).decision_function(X[i:i + 7]) for i in range(0, len(X), 7)]
    assert np.concatenate(chunks).tobytes() == QuantizedTinyCNN.from_qmodel(qm).decision_function(X).tobytes()


@criterion(9, "int8 agreement and bit reproducibility")
def test_c9_logits_within_reported_bound(default_run, default_artifacts, record_property):
    bundle, clf, qm = default_artifacts
    X, _, _ = bundle.arrays("test")
    idx = np.random.default_rng(9).choice(len(X), size=100, replace=False)
    dev = np.abs(QuantizedTinyCNN.from_qmodel(qm).decision_function(X[idx]) - clf.decision_function(X[idx]))
    bound = json.loads((default_run["q"] / "quant_report.json").read_text())["logit_error_bound"]
    assert dev.max() < bound
    record_property("detail", f"max |dlogit| {dev.max():.3f} < bound {bound:.3f}")


# -- 10: telemetry ---------------------------------------------------------------

@criterion(10, "telemetry round trip, corruption detection, frame size")
def test_c10_telemetry(record_property):
    rng = np.random.default_rng(10)
    for _ in range(10_000):
        f = random_frame(rng)
        assert tm.decode(tm.encode(f)) == f
    rejected = total = 0
    for _ in range(1000):
        buf = tm.encode(random_frame(rng))
        for bit in range(len(buf) * 8):
            bad = bytearray(buf)
            bad[bit // 8] ^= 1 << (bit % 8)
            total += 1
            try:
                tm.decode(bytes(bad))
            except tm.TelemetryError:
                rejected += 1
    assert rejected == total
    assert len(tm.encode(tm.TelemetryFrame.raw(0, 0, [0] * 24))) == 60
    record_property("detail", f"10000 round trips, {rejected}/{total} bit flips rejected")


# -- 11: determinism ---------------------------------------------------------------

def _artifacts(run: dict) -> dict:
    out = {}
    for stage in ("ds", "tr", "q", "qe"):
        for p in sorted(run[stage].rglob("*")):
            if p.is_file():
                data = p.read_bytes()
                if p.name == "resolved_config.json":
                    # input paths differ between the two runs; everything else must match
                    d = json.loads(data)
                    d.pop("inputs")
                    data = json.dumps(d, sort_keys=True).encode()
                out[f"{stage}/{p.relative_to(run[stage]).as_posix()}"] = data
    return out


@criterion(11, "byte-identical reruns of gen, train, qeval")
def test_c11_determinism(default_run, tmp_path, record_property):
    again = _pipeline(tmp_path)
    a, b = _artifacts(default_run), _artifacts(again)
    assert sorted(a) == sorted(b)
    differing = [k for k in a if a[k] != b[k]]
    assert not differing, differing
    record_property("detail", f"{len(a)} artifact files identical")
