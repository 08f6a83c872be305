import math

import numpy as np
import pytest

from ucan import experiments, synth
from ucan.errors import DomainError

import oracles


def test_separation_matches_bisection_oracle():
    assert synth.separation_for_auc(0.98) == pytest.approx(2.904439563124491, abs=1e-9)
    assert synth.separation_for_auc(0.82) == pytest.approx(1.2945217217501468, abs=1e-9)
    for a in (0.51, 0.7, 0.9, 0.999):
        assert synth.separation_for_auc(a) == pytest.approx(oracles.separation_bisect(a), abs=1e-9)


def test_separation_vanishes_near_half():
    assert synth.separation_for_auc(0.5 + 1e-9) < 1e-7
    with pytest.raises(DomainError):
        synth.separation_for_auc(0.5)


def test_invalid_configs():
    with pytest.raises(DomainError):
        synth.SynthConfig([0.0, 1.0], 1.0, [[5, 5], [5, 5]], covariance=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DomainError):
        synth.SynthConfig([0.0, 1.0], 1.0, [[5, 0], [5, 5]])
    with pytest.raises(DomainError):
        synth.SynthConfig([0.0, 1.0], 1.0, [[5, 5], [5, 5]], covariance=[[1.0, 0.3], [0.0, 1.0]])


@pytest.mark.parametrize("preset, rows, per_color", [
    ("balanced", 20000, {0: 10000, 1: 10000}),
    ("imbalanced", 11000, {0: 1000, 1: 10000}),
    ("multilabel-imbalanced", 21000, {0: 1000, 1: 10000, 2: 10000}),
])
def test_preset_counts(preset, rows, per_color):
    ds = synth.generate(experiments.preset_config(preset, 3))
    assert len(ds) == rows
    assert dict(zip(*np.unique(ds.color, return_counts=True))) == per_color
    if preset == "imbalanced":
        assert ds.color_names[0] == "blue"
    if preset == "multilabel-imbalanced":
        assert ds.color_names == ["green", "red", "blue"]


def test_same_seed_same_bytes():
    a = synth.generate(synth.calibrated_binary_preset(seed=11))
    b = synth.generate(synth.calibrated_binary_preset(seed=11))
    c = synth.generate(synth.calibrated_binary_preset(seed=12))
    assert a.vectors.tobytes() == b.vectors.tobytes()
    assert a.vectors.tobytes() != c.vectors.tobytes()


def test_cell_means_within_three_sigma():
    cfg = synth.calibrated_binary_preset(seed=5)
    ds = synth.generate(cfg)
    for c in range(2):
        for l in range(2):
            rows = ds.vectors[(ds.color == c) & (ds.lightness == l)]
            bound = 3.0 / math.sqrt(len(rows))
            assert np.all(np.abs(rows.mean(axis=0) - cfg.cell_mean(c, l)) < bound)


def test_shared_covariance_is_applied():
    cov = [[2.0, 0.6], [0.6, 0.5]]
    cfg = synth.SynthConfig([0.0, 3.0], 1.0, [[20000, 20000], [20000, 20000]], covariance=cov, seed=1)
    ds = synth.generate(cfg)
    rows = ds.vectors[(ds.color == 1) & (ds.lightness == 0)]
    np.testing.assert_allclose(np.cov(rows.T), cov, atol=0.05)


def test_balanced_labels_independent():
    ds = synth.generate(synth.calibrated_binary_preset(seed=2))
    joint = np.histogram2d(ds.color, ds.lightness, bins=2)[0] / len(ds)
    pc, pl = joint.sum(axis=1), joint.sum(axis=0)
    mi = sum(joint[i, j] * math.log(joint[i, j] / (pc[i] * pl[j])) for i in range(2) for j in range(2))
    assert mi < 1e-9


def test_feature_views():
    ds = synth.generate(synth.calibrated_binary_preset(counts=[[5, 6], [7, 8]]))
    assert ds.feature("lightness").class_names == ["dark", "light"]
    assert ds.feature("color").num_classes == 2
    with pytest.raises(KeyError):
        ds.feature("hue")


@pytest.mark.parametrize("preset", ["balanced", "multilabel-imbalanced"])
def test_calibrated_raw_aucs(preset):
    ds = synth.generate(experiments.preset_config(preset, 7))
    f1, f2 = experiments.measure_both(ds, seed=7)
    assert abs(f1.mean_auc - 0.98) <= 0.02
    if preset == "balanced":
        assert abs(f2.mean_auc - 0.82) <= 0.03
    else:
        assert abs(f2.mean_auc - 0.81) <= 0.03
