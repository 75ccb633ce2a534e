import csv
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medtalk import oracle
from medtalk.errors import ValidationError
from medtalk.metrics import EvalReport, clip_metrics, eie, evaluate_corpus, evaluate_pairs, frd, mee, mle
from medtalk.rigcore import ControllerSets, RigSequence, write_rig

SETS = ControllerSets.default()
GOLDEN = Path(__file__).parent / "data" / "golden"
METRICS = {"mle": (mle, oracle.mle), "mee": (mee, oracle.mee), "eie": (eie, oracle.eie), "frd": (frd, oracle.frd)}


def pair(rng, T=6, D=174):
    return rng.uniform(0, 1, (T, D)), rng.uniform(0, 1, (T, D))


def test_identical_is_zero(rng):
    g = rng.uniform(size=(5, 174))
    assert clip_metrics(g, g, SETS) == {"mle": 0.0, "mee": 0.0, "eie": 0.0, "frd": 0.0}


def test_constant_offsets(rng):
    g = rng.uniform(size=(5, 174))
    p = g.copy()
    p[:, list(SETS.lip)] += 0.01
    assert mle(p, g, SETS) == pytest.approx(0.01)
    q = g.copy()
    q[:, list(SETS.emo)] += 0.02
    assert mee(q, g, SETS) == pytest.approx(0.02)
    assert mle(q, g, SETS) == 0.0


def test_eie_doubling_hand_example():
    sets = ControllerSets(lip=(0,), emo=(1, 2), up=(1, 2), intensity=(1, 2))
    g = np.array([[0.0, 0.2, -0.1], [0.5, 0.4, 0.0], [0.0, 0.0, 0.3]])
    p = g.copy()
    p[:, 1:] *= 2
    # Int(gt) = [0.3, 0.4, 0.3], so doubling gives an error equal to its mean
    assert eie(p, g, sets) == pytest.approx(np.mean([0.3, 0.4, 0.3]))


def test_frd_constant_prediction(rng):
    g = rng.uniform(size=(8, 174))
    p = np.full_like(g, 0.5)
    expect = g[:, list(SETS.up)].std(axis=0).mean()
    assert frd(p, g, SETS) == pytest.approx(expect) and expect > 0
    assert frd(g, p, SETS) == pytest.approx(-expect)
    assert frd(g, p, SETS, absolute=True) == pytest.approx(expect)


def test_errors():
    with pytest.raises(ValidationError):
        mle(np.zeros((3, 174)), np.zeros((4, 174)), SETS)
    with pytest.raises(ValidationError):
        eie(np.zeros((3, 174)), np.zeros((4, 174)), SETS)
    with pytest.raises(ValidationError, match="2 frames"):
        frd(np.zeros((1, 174)), np.zeros((1, 174)), SETS)


def test_oracle_equivalence_100_pairs():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    for _ in range(100):
        p, g = pair(rng, T=int(rng.integers(2, 21)))
        for name, (fast, slow) in METRICS.items():
            assert abs(fast(p, g, SETS) - slow(p, g, SETS)) <= 1e-12, name
    assert time.perf_counter() - start < 10


@given(st.integers(2, 20), st.integers(0, 2**31 - 1))
def test_oracle_equivalence_property(T, seed):
    p, g = pair(np.random.default_rng(seed), T)
    for fast, slow in METRICS.values():
        assert abs(fast(p, g, SETS) - slow(p, g, SETS)) <= 1e-12


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_region_isolation(seed):
    rng = np.random.default_rng(seed)
    p, g = pair(rng, 5, 20)
    sets = ControllerSets(lip=range(0, 5), emo=range(5, 12), up=range(12, 20), intensity=range(12, 16))
    base = clip_metrics(p, g, sets)
    for metric, region in (("mle", sets.lip), ("mee", sets.emo), ("frd", sets.up), ("eie", sets.intensity)):
        q = p.copy()
        outside = [j for j in range(20) if j not in region]
        q[:, outside] += rng.normal(size=(5, len(outside)))
        assert clip_metrics(q, g, sets)[metric] == base[metric]


@given(st.integers(0, 2**31 - 1))
def test_symmetry(seed):
    p, g = pair(np.random.default_rng(seed), 5)
    for f in (mle, mee, eie):
        assert f(p, g, SETS) == pytest.approx(f(g, p, SETS), abs=1e-15)
        assert f(p, g, SETS) >= 0
    assert frd(p, g, SETS) == pytest.approx(-frd(g, p, SETS), abs=1e-15)


def test_report_aggregate_is_mean(rng):
    rows = [(f"c{i}", *pair(rng)) for i in range(2)]
    rep = evaluate_pairs(rows, SETS)
    for m in ("mle", "mee", "eie", "frd"):
        assert abs(getattr(rep, m) - np.mean([r[m] for r in rep.per_clip])) <= 1e-9
    assert "MLE" in rep.format_table() and rep.to_csv().startswith("clip,mle,mee,eie,frd")


def test_report_sorted_by_clip(rng):
    rep = evaluate_pairs([("b", *pair(rng)), ("a", *pair(rng))], SETS)
    assert [r["clip"] for r in rep.per_clip] == ["a", "b"]


def test_corpus_single_identical_pair(tmp_path, rng):
    for d in ("p", "g"):
        (tmp_path / d).mkdir()
        write_rig(RigSequence(np.full((4, 174), 0.25)), tmp_path / d / "x.rig.txt")
    rep = evaluate_corpus(tmp_path / "p", tmp_path / "g", SETS)
    assert rep.aggregate() == {"mle": 0.0, "mee": 0.0, "eie": 0.0, "frd": 0.0} and not rep.errors


def test_corpus_missing_counterpart_listed(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    for name in ("a", "b"):
        write_rig(RigSequence(np.zeros((3, 174))), tmp_path / "g" / f"{name}.rig.txt")
    write_rig(RigSequence(np.zeros((3, 174))), tmp_path / "p" / "a.rig.txt")
    rep = evaluate_corpus(tmp_path / "p", tmp_path / "g", SETS)
    assert [r["clip"] for r in rep.per_clip] == ["a"]
    assert len(rep.errors) == 1 and "b" in rep.errors[0]
    assert "errors:" in rep.format_table()


def test_golden_report():
    rep = evaluate_corpus(GOLDEN / "pred", GOLDEN / "gt", SETS)
    with open(GOLDEN / "golden.csv") as f:
        golden = {r["clip"]: r for r in csv.DictReader(f)}
    assert [r["clip"] for r in rep.per_clip] == sorted(golden)
    for row in rep.per_clip:
        for m in ("mle", "mee", "eie", "frd"):
            assert abs(row[m] - float(golden[row["clip"]][m])) <= 1e-9


def test_empty_report_is_nan():
    rep = EvalReport.from_rows([])
    assert np.isnan(rep.mle)
