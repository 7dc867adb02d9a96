import itertools
import math
import random

import pytest

mpkd = pytest.importorskip("mpkd")


def test_rank_metrics():
    assert mpkd.summarize_ranks([1, 2, 4])["mrr"] == pytest.approx(0.583333, abs=1e-6)
    assert mpkd.summarize_ranks([3, 15])["hits10"] == 0.5
    assert mpkd.rank_of([0.5, 0.5, 0.5], 2) == 3


def test_transfer_ratio():
    assert abs(mpkd.transfer_ratio([19.51, 19.05], 14.31) - 1.35) <= 0.005
    with pytest.raises(mpkd.Error):
        mpkd.transfer_ratio([1.0], 0.0)


def test_assignment_against_enumeration():
    rng = random.Random(3)
    for _ in range(20):
        v = [[rng.uniform(-1, 1) for _ in range(4)] for _ in range(4)]
        got = sum(v[i][j] for i, j in mpkd.solve_assignment(v))
        best = max(sum(max(v[i][p[i]], 0.0) for i in range(4)) for p in itertools.permutations(range(4)))
        assert got == pytest.approx(best, abs=1e-12)


def test_softmax_and_cosine():
    p = mpkd.softmax_masked([1.0, 2.0], [True, True])
    assert p[0] == pytest.approx(1 / (1 + math.e))
    with pytest.raises(mpkd.Error, match="empty support"):
        mpkd.softmax_masked([1.0], [False])
    assert mpkd.cosine([1.0, 0.0], [-2.0, 0.0]) == -1.0


def test_integration_is_causal():
    traj = [[1.0, 0.0, 0.5], [0.2, -1.0, 0.3], [0.7, 0.7, -0.1]]
    a = mpkd.temporal_integrate(traj, seed=4)
    traj[2] = [5.0, 5.0, 5.0]
    b = mpkd.temporal_integrate(traj, seed=4)
    assert a[:2] == b[:2]


def test_synthetic_pair():
    p = mpkd.synthetic_pair(7, {"entities": 50, "events_per_step": 10, "coverage": 0.2})
    assert len(p["alignments"]) == 10
    assert p == mpkd.synthetic_pair(7, {"entities": 50, "events_per_step": 10, "coverage": 0.2})
    with pytest.raises(mpkd.Error):
        mpkd.synthetic_pair(1, {"bogus": 1})


def test_nce_decay():
    r = mpkd.nce_decay(seeds=3)
    dev = r["deviation"]
    assert all(b <= a for a, b in zip(dev, dev[1:]))


def test_tiny_training_run():
    r = mpkd.run_experiment(
        3,
        train={"dim": "8", "epochs": "2", "teacher_epochs": "1", "warmup_epochs": "1", "align_negatives": "5"},
        data={"entities": 40, "events_per_step": 20, "coverage": 0.25},
    )
    assert 0.0 < r["mrr"] <= 1.0
    assert r["epochs_run"] == 2
