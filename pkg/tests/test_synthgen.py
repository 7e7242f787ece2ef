import json
from dataclasses import replace

import numpy as np
import pytest

from knowrare.cohort import load_cohort
from knowrare.errors import Infeasible
from knowrare.preprocess import aggregate_windows
from knowrare.synthgen import SynthSpec, generate, make_rare, write_synth

SMALL = SynthSpec(n_conditions=6, n_clusters=2, patients_per_condition=(12, 16), seed=3)


def drug_sets(stays):
    out = {}
    for s in stays:
        out.setdefault(s.condition, set()).update(s.drugs)
    return out


def jaccard(a, b):
    return len(a & b) / len(a | b)


def test_determinism():
    a, ta = generate(SMALL)
    b, tb = generate(SMALL)
    assert [s.stay_id for s in a] == [s.stay_id for s in b]
    for x, y in zip(a, b):
        assert x.series.tobytes() == y.series.tobytes() and x.drugs == y.drugs and x.outcome == y.outcome
    np.testing.assert_array_equal(ta.true_similarity, tb.true_similarity)


def test_series_finite_where_observed_and_missing_rate():
    stays, _ = generate(SMALL)
    cells = np.concatenate([s.mask.ravel() for s in stays])
    assert 0.25 < cells.mean() < 0.35
    for s in stays:
        assert np.all(np.isfinite(s.series[~s.mask]))


def test_same_cluster_drug_jaccard():
    vals = []
    for seed in range(100):
        spec = SynthSpec(n_conditions=4, n_clusters=2, patients_per_condition=(10, 10), n_vars=2, horizon=4, seed=seed)
        stays, truth = generate(spec)
        sets = drug_sets(stays)
        a, b = [c for c in truth.codes if truth.cluster_of[c] == 0][:2]
        vals.append(jaccard(sets[a], sets[b]))
    assert np.mean(vals) > 0.5


def test_truth_similarity_is_cluster_indicator():
    _, truth = generate(SMALL)
    S = truth.true_similarity
    np.testing.assert_array_equal(S, S.T)
    assert np.all(np.diag(S) == 1)
    for i, a in enumerate(truth.codes):
        for j, b in enumerate(truth.codes):
            assert S[i, j] == (truth.cluster_of[a] == truth.cluster_of[b])


def test_record_profiles_rank_cluster_mates():
    # oracle: mean/std profile distance, brute force over condition pairs
    stays, truth = generate(replace(SMALL, n_conditions=8, patients_per_condition=(40, 40)))
    prof = {}
    for c in truth.codes:
        xs = [aggregate_windows(s, 60, 24, "first_hours")[0] for s in stays if s.condition == c]
        cells = np.concatenate(xs)
        prof[c] = np.concatenate([np.nanmean(cells, axis=0), np.nanstd(cells, axis=0)])
    good = total = 0
    for a in truth.codes:
        for b in truth.codes:
            for c in truth.codes:
                if len({a, b, c}) < 3:
                    continue
                if truth.cluster_of[a] == truth.cluster_of[b] != truth.cluster_of[c]:
                    total += 1
                    good += np.linalg.norm(prof[a] - prof[b]) < np.linalg.norm(prof[a] - prof[c])
    assert good / total >= 0.9


def test_make_rare():
    code = SMALL.codes()[0]
    n = SMALL.condition_counts()[0]
    assert make_rare(SMALL, code, n).rare == ()
    rare = make_rare(SMALL, code, 10)
    stays, _ = generate(rare)
    mine = [s for s in stays if s.condition == code]
    assert len(mine) == 10 and any(s.outcome.positive for s in mine)
    with pytest.raises(ValueError):
        make_rare(SMALL, code, n + 1)


def test_make_rare_infeasible():
    spec = replace(SMALL, label_bias=-50.0)
    with pytest.raises(Infeasible):
        make_rare(spec, spec.codes()[0], 1)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(clusters=((0, 1),), n_conditions=3)
    with pytest.raises(ValueError):
        SynthSpec(label_window=30, horizon=24)


def test_write_synth_roundtrip(tmp_path):
    stays, truth = generate(SMALL)
    manifest = write_synth(tmp_path, SMALL, stays, truth)
    back = load_cohort(manifest)
    assert [s.stay_id for s in back] == [s.stay_id for s in stays]
    payload = json.loads((tmp_path / "truth.json").read_text())
    assert payload["codes"] == truth.codes and payload["spec"]["seed"] == 3
