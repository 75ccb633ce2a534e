import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from medtalk.rigcore import ControllerSets
from medtalk.synthdata import SynthSpec, generate_dataset

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(n_contents=4, seq_len=24, seed=3)


@pytest.fixture(scope="session")
def small_data(small_spec):
    return generate_dataset(small_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_models(small_data):
    """A quickly trained (meaningless) stack for contract tests, with checksums per stage."""
    from medtalk.acm import train_acm
    from medtalk.disentangle import Stage1Schedule, train_stage1
    from medtalk.fim import train_fim
    from medtalk.guidance import train_guidance
    from medtalk.nets import StageSchedule
    from medtalk.synthdata import GuidanceOracle, make_guidance_pairs

    sets = ControllerSets.default()
    quick = StageSchedule(epochs=1)
    bundle = train_stage1(small_data, Stage1Schedule(1, 1, 1, learning_rate=1e-3), content_dim=8,
                          emotion_dim=8, hidden=16)
    sums = {"bundle": [bundle.checksum()]}
    acm = train_acm(small_data, bundle, quick, hidden=16)
    sums["bundle"].append(bundle.checksum())
    fim = train_fim(small_data, bundle, acm, list(sets.intensity), quick, cmf_hidden=8, fuse_hidden=16)
    sums["bundle"].append(bundle.checksum())
    sums["acm"] = [acm.checksum()]
    before4 = {n: m.checksum() for n, m in
               (("cmf", fim.cmf), ("label_table", fim.label_table), ("fusion_encoder", fim.fusion_encoder))}
    oracle = GuidanceOracle(width=12, seed=0)
    guid = train_guidance(make_guidance_pairs(small_data, oracle), bundle, acm, fim, list(sets.intensity),
                          quick, head_hidden=16)
    sums["bundle"].append(bundle.checksum())
    sums["acm"].append(acm.checksum())
    after4 = {n: m.checksum() for n, m in
              (("cmf", fim.cmf), ("label_table", fim.label_table), ("fusion_encoder", fim.fusion_encoder))}
    return dict(bundle=bundle, acm=acm, fim=fim, guidance=guid, oracle=oracle, sets=sets,
                checksums=sums, stage3_before=before4, stage3_after=after4)


ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
