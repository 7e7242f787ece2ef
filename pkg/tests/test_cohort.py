import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_stay
from knowrare.cohort import (
    Cohort,
    Task,
    apportion,
    assign_primary_condition,
    filter_cohort,
    load_cohort,
    restrict_condition,
    split_cohort,
    write_cohort,
)
from knowrare.errors import EmptyCohort, MalformedCode, ParseError, SchemaError


def stays_for(counts, hours=48.0):
    out = []
    for cond, n in counts.items():
        for i in range(n):
            out.append(make_stay(f"{cond}-{i}", f"p{cond}-{i}", cond, [[1.0]], hours=hours, label=i % 2))
    return out


@pytest.mark.parametrize("raw,code", [("428.23", "428"), ("0389", "038"), ("V58.61", "V58"), ("E880", "E88")])
def test_primary_condition(raw, code):
    assert assign_primary_condition(raw) == code


@pytest.mark.parametrize("raw", ["42", "4.2", ""])
def test_malformed_code(raw):
    with pytest.raises(MalformedCode):
        assign_primary_condition(raw)


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="0123456789VE.", min_size=3, max_size=8).filter(lambda s: len(s.replace(".", "")) >= 3))
def test_primary_condition_length(raw):
    assert len(assign_primary_condition(raw)) == 3


def test_filter_thresholds():
    stays = stays_for({"428": 10, "250": 9})
    stays.append(make_stay("short", "ps", "428", [[1.0]], hours=47.9))
    stays.append(make_stay("exact", "pe", "428", [[1.0]], hours=48.0))
    kept = filter_cohort(stays, 48.0, 10)
    ids = {s.stay_id for s in kept}
    assert "exact" in ids and "short" not in ids
    assert {s.condition for s in kept} == {"428"}
    assert [s.stay_id for s in filter_cohort(kept, 48.0, 10)] == [s.stay_id for s in kept]
    with pytest.raises(EmptyCohort):
        filter_cohort(stays, 100.0, 10)


def test_filter_counts_patients_not_stays():
    # nine patients with two stays each: still below ten patients
    stays = [make_stay(f"s{i}-{j}", f"p{i}", "428", [[1.0]]) for i in range(9) for j in range(2)]
    stays += stays_for({"250": 10})
    assert {s.condition for s in filter_cohort(stays, 48.0, 10)} == {"250"}


def test_split_sizes_and_small_conditions():
    split = split_cohort(stays_for({"428": 100}), (0.67, 0.16, 0.17), 0)
    assert (len(split.train), len(split.valid), len(split.test)) == (67, 16, 17)
    single = split_cohort(stays_for({"428": 1}), seed=3)
    assert len(single.train) == 1
    assert apportion(2, (0.67, 0.16, 0.17)) == [1, 1, 0]


def test_split_determinism_and_patient_separation():
    stays = stays_for({"428": 30, "250": 14})
    stays += [make_stay(f"m{j}", "pmulti", "428", [[1.0]]) for j in range(3)]
    a, b = split_cohort(stays, seed=7), split_cohort(stays, seed=7)
    assert a == b
    where = {sid: name for name in ("train", "valid", "test") for sid in a.of(name)}
    assert len({where[f"m{j}"] for j in range(3)}) == 1


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.sampled_from(["428", "250", "038", "V58"]), st.integers(1, 40), min_size=1),
       st.integers(0, 2**31))
def test_split_partition_and_stratification(counts, seed):
    stays = stays_for(counts)
    split = split_cohort(stays, seed=seed)
    parts = [set(split.train), set(split.valid), set(split.test)]
    assert sum(map(len, parts)) == len(stays)
    assert set().union(*parts) == {s.stay_id for s in stays}
    for cond, n in counts.items():
        if n < 6:
            continue
        for part, frac in zip(parts, split.fractions):
            share = sum(sid.startswith(cond) for sid in part) / n
            assert abs(share - frac) < 1 / n


def test_restrict_condition_keeps_a_positive():
    stays = stays_for({"428": 20, "250": 5})
    kept = restrict_condition(stays, "428", 3, seed=1)
    mine = [s for s in kept if s.condition == "428"]
    assert len(mine) == 3 and any(s.outcome.positive for s in mine)
    assert sum(s.condition == "250" for s in kept) == 5


def test_task_parse():
    assert Task.parse("multiclass:4") == Task("multiclass", 4)
    assert Task.parse("binary").width == 2
    with pytest.raises(ValueError):
        Task("regression")


def sample_cohort():
    s1 = make_stay("a", "p1", "428", [[1.0, np.nan], [2.0, 3.0]], drugs={"x"}, label=1)
    s2 = make_stay("b", "p2", "250", [[np.nan, 4.0]], drugs={"x", "y"}, diagnoses={"428"})
    return Cohort([s1, s2], ["hr", "sbp"], Task("binary"))


def test_write_load_roundtrip(tmp_path):
    c = sample_cohort()
    manifest = write_cohort(c, c.variables, tmp_path, c.task)
    back = load_cohort(manifest)
    assert back.variables == ["hr", "sbp"]
    for a, b in zip(c, back):
        assert a.stay_id == b.stay_id and a.condition == b.condition
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(np.nan_to_num(a.series), np.nan_to_num(b.series))
        assert a.drugs == b.drugs and a.diagnoses == b.diagnoses and a.outcome == b.outcome
    # an empty measurement cell is missing
    assert back[0].mask[0, 1]


def rewrite(path, fn):
    path.write_text(fn(path.read_text(encoding="utf-8")), encoding="utf-8")


def test_duplicate_stay_id(tmp_path):
    c = sample_cohort()
    manifest = write_cohort(c, c.variables, tmp_path, c.task)
    stays_csv = tmp_path / json.loads(manifest.read_text())["stays_csv"]
    lines = stays_csv.read_text().splitlines()
    stays_csv.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(SchemaError):
        load_cohort(manifest)


def test_missing_column_and_parse_error(tmp_path):
    c = sample_cohort()
    manifest = write_cohort(c, c.variables, tmp_path, c.task)
    series_csv = tmp_path / json.loads(manifest.read_text())["series_csv"]
    original = series_csv.read_text()
    rewrite(series_csv, lambda t: t.replace("value", "val", 1))
    with pytest.raises(SchemaError):
        load_cohort(manifest)
    lines = original.splitlines()
    parts = lines[2].split(",")
    parts[1] = "later"
    lines[2] = ",".join(parts)
    series_csv.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_cohort(manifest)
    assert err.value.line == 3


def test_zero_stays(tmp_path):
    c = sample_cohort()
    manifest = write_cohort(c, c.variables, tmp_path, c.task)
    stays_csv = tmp_path / json.loads(manifest.read_text())["stays_csv"]
    stays_csv.write_text(stays_csv.read_text().splitlines()[0] + "\n")
    with pytest.raises(EmptyCohort):
        load_cohort(manifest)
