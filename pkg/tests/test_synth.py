import json
import time

import numpy as np
import pytest
from scipy import stats

from ape_anomaly.evaluation import evaluate
from ape_anomaly.synth import SynthConfig, generate, generate_indices, generate_split, parse_id, planted_log_density
from ape_anomaly.trainer import TrainConfig, train


def test_deterministic():
    cfg = SynthConfig(n_events=500)
    assert generate(cfg).rows() == generate(cfg).rows()
    assert generate(SynthConfig(n_events=500, seed=8)).rows() != generate(cfg).rows()


def test_rho_one_shares_group():
    cfg = SynthConfig(m=4, arities=10, groups=2, rho=1.0, n_events=10**4, seed=0)
    ids = generate_indices(cfg)
    groups = ids // 5
    assert (groups == groups[:, :1]).all()


def test_irrelevant_types_ignore_groups():
    cfg = SynthConfig(m=4, arities=10, groups=2, rho=1.0, irrelevant_pairs=((2, 3),), n_events=10**4, seed=0)
    g = generate_indices(cfg) // 5
    assert (g[:, 0] == g[:, 1]).all()
    assert abs((g[:, 0] == g[:, 2]).mean() - 0.5) < 0.03
    assert cfg.relevant_pairs == [(0, 1)]


def test_uniform_marginals(acceptance_synth):
    ids = generate_indices(acceptance_synth)
    for t in range(acceptance_synth.m):
        counts = np.bincount(ids[:, t], minlength=50)
        assert stats.chisquare(counts).pvalue > 0.01


def test_co_occurrence_rate(acceptance_synth):
    cfg = acceptance_synth
    g = generate_indices(cfg) // 10
    n = len(g)
    # intra-group events always agree; uniform ones agree with probability 1/g
    expected = cfg.rho + (1 - cfg.rho) / cfg.groups
    sigma = np.sqrt(expected * (1 - expected) / n)
    for i, j in cfg.relevant_pairs:
        assert (g[:, i] == g[:, j]).mean() >= cfg.rho - 3 * sigma
        assert abs((g[:, i] == g[:, j]).mean() - expected) <= 4 * sigma


@pytest.mark.parametrize(
    "kwargs",
    [{"arities": 7, "groups": 2}, {"rho": 1.5}, {"rho": -0.1}, {"m": 1}, {"irrelevant_pairs": ((0, 0),)}],
)
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)


def test_generation_speed(acceptance_synth):
    t0 = time.perf_counter()
    generate(acceptance_synth)
    assert time.perf_counter() - t0 < 10


def test_planted_density_normalized():
    cfg = SynthConfig(m=3, arities=4, groups=2, rho=0.7, irrelevant_pairs=((1, 2),), n_events=1)
    grid = np.indices((4, 4, 4)).reshape(3, -1).T
    assert np.exp(planted_log_density(cfg, grid)).sum() == pytest.approx(1.0)


def test_entity_names_round_trip():
    ds = generate(SynthConfig(m=2, arities=4, groups=2, n_events=50, seed=0))
    assert all(0 <= parse_id(v) < 4 for row in ds.rows() for v in row)


def test_null_experiment():
    cfg = SynthConfig(rho=0.0, n_events=20000, seed=7)
    tr, te = generate_split(cfg, 4000)
    model, _ = train(tr, TrainConfig(seed=0))
    report, _ = evaluate(model, te, 1, np.random.default_rng(0), train=tr)
    assert abs(report.roc_auc - 0.5) <= 0.05


def test_config_json_round_trip():
    cfg = SynthConfig(m=3, arities=(4, 6, 8), groups=2, irrelevant_pairs=((0, 2),))
    assert SynthConfig.from_json(json.dumps(cfg.to_dict())) == cfg
