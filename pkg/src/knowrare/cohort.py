"""Patient-stay data model, CSV ingestion, cohort filtering and stratified splitting."""
import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCohort, MalformedCode, ParseError, SchemaError

SPLIT_NAMES = ("train", "valid", "test")
DEFAULT_FRACTIONS = (0.67, 0.16, 0.17)

GENDERS = ("F", "M")
RACES = ("white", "black", "asian", "hispanic", "other")
# age, gender one-hot (+unknown), race one-hot (+unknown)
CONTEXT_WIDTH = 1 + len(GENDERS) + 1 + len(RACES) + 1


@dataclass(frozen=True)
class Task:
    kind: str  # binary | multiclass | multilabel
    n: int = 2

    def __post_init__(self):
        if self.kind not in ("binary", "multiclass", "multilabel"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "binary" and self.n != 2:
            raise ValueError("binary task has exactly 2 classes")
        if self.n < 1:
            raise ValueError("task width must be positive")

    @property
    def width(self):
        """Number of classifier outputs."""
        return self.n

    @property
    def name(self):
        return "binary" if self.kind == "binary" else f"{self.kind}:{self.n}"

    @classmethod
    def parse(cls, spec):
        if isinstance(spec, Task):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], int(spec.get("n", 2)))
        kind, _, n = str(spec).partition(":")
        return cls(kind, int(n) if n else 2)


@dataclass(frozen=True)
class OutcomeLabel:
    task: Task
    value: object  # int, or tuple of 0/1 for multilabel

    def __post_init__(self):
        if self.task.kind == "multilabel":
            bits = tuple(int(b) for b in self.value)
            if len(bits) != self.task.n or any(b not in (0, 1) for b in bits):
                raise ValueError(f"multilabel value must be {self.task.n} bits, got {self.value!r}")
            object.__setattr__(self, "value", bits)
        else:
            v = int(self.value)
            if not 0 <= v < self.task.n:
                raise ValueError(f"label {v} outside [0, {self.task.n})")
            object.__setattr__(self, "value", v)

    @property
    def positive(self):
        """True for an event: label 1 (binary), any non-zero class, or any set bit."""
        if self.task.kind == "multilabel":
            return any(self.value)
        return self.value != 0

    def as_array(self):
        return np.asarray(self.value, dtype=np.float64)


@dataclass
class CohortStay:
    """One ICU/hospital stay.

    ``series`` is (T_raw, F) with NaN at missing cells and ``mask`` is True
    exactly where a cell is missing. ``diagnoses`` holds every level-3 code
    recorded for the stay, the primary ``condition`` included.
    """

    stay_id: str
    patient_id: str
    series: np.ndarray
    mask: np.ndarray
    timestamps: np.ndarray
    context: np.ndarray
    condition: str
    outcome: OutcomeLabel
    stay_hours: float
    drugs: frozenset = frozenset()
    diagnoses: frozenset = frozenset()
    raw_icd: str = ""

    def __post_init__(self):
        if self.series.shape != self.mask.shape:
            raise SchemaError(f"stay {self.stay_id}: series/mask shapes differ")
        if self.timestamps.shape[0] != self.series.shape[0]:
            raise SchemaError(f"stay {self.stay_id}: one timestamp per raw row required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise SchemaError(f"stay {self.stay_id}: timestamps must be strictly increasing")
        if not self.stay_hours > 0:
            raise SchemaError(f"stay {self.stay_id}: stay_hours must be positive")
        if len(self.condition) != 3:
            raise MalformedCode(f"stay {self.stay_id}: condition {self.condition!r} is not level-3")
        self.diagnoses = frozenset(self.diagnoses) | {self.condition}
        self.drugs = frozenset(self.drugs)


class Cohort(list):
    """List of stays that also remembers the variable names and the task."""

    def __init__(self, stays=(), variables=(), task=None):
        super().__init__(stays)
        self.variables = list(variables)
        self.task = task


@dataclass(frozen=True)
class CohortSplit:
    train: list
    valid: list
    test: list
    fractions: tuple = DEFAULT_FRACTIONS

    def of(self, name):
        return getattr(self, name)

    def select(self, stays, name):
        keep = set(self.of(name))
        return _like(stays, [s for s in stays if s.stay_id in keep])


def _like(template, stays):
    if isinstance(template, Cohort):
        return Cohort(stays, template.variables, template.task)
    return list(stays)


def assign_primary_condition(raw_icd):
    """Level-3 ICD-9-CM code: drop '.', keep the first three characters."""
    code = str(raw_icd).strip().replace(".", "")
    if len(code) < 3:
        raise MalformedCode(f"ICD-9 code {raw_icd!r} has fewer than 3 characters")
    return code[:3].upper()


def encode_context(age, gender, race):
    vec = np.zeros(CONTEXT_WIDTH)
    vec[0] = float(age) if age not in (None, "") else np.nan
    g = str(gender or "").strip().upper()[:1]
    vec[1 + (GENDERS.index(g) if g in GENDERS else len(GENDERS))] = 1.0
    r = str(race or "").strip().lower()
    off = 1 + len(GENDERS) + 1
    vec[off + (RACES.index(r) if r in RACES else len(RACES))] = 1.0
    return vec


def filter_cohort(stays, min_hours, min_patients_per_condition):
    """Drop short stays, then conditions with too few distinct patients; order preserved."""
    if not min_hours > 0 or min_patients_per_condition < 1:
        raise ValueError("min_hours must be > 0 and min_patients_per_condition >= 1")
    long_enough = [s for s in stays if s.stay_hours >= min_hours]
    patients = defaultdict(set)
    for s in long_enough:
        patients[s.condition].add(s.patient_id)
    kept = [s for s in long_enough if len(patients[s.condition]) >= min_patients_per_condition]
    if not kept:
        raise EmptyCohort("no stays survive cohort filtering")
    return _like(stays, kept)


def apportion(n, fractions):
    """Largest-remainder counts per split; fewer items than splits go train, valid, test in order."""
    if n < len(fractions):
        return [1 if i < n else 0 for i in range(len(fractions))]
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    left = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split_cohort(stays, fractions=DEFAULT_FRACTIONS, seed=0):
    """Patient-level split stratified by condition.

    A patient is stratified under the condition of their first listed stay and
    all of their stays follow them into one split.
    """
    fractions = tuple(float(f) for f in fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} do not sum to 1")
    stratum = {}
    for s in stays:
        stratum.setdefault(s.patient_id, s.condition)
    by_condition = defaultdict(list)
    for pid, cond in stratum.items():
        by_condition[cond].append(pid)
    rng = np.random.default_rng(seed)
    assigned = {}
    for cond in sorted(by_condition):
        pids = sorted(by_condition[cond])
        pids = [pids[i] for i in rng.permutation(len(pids))]
        counts = apportion(len(pids), fractions)
        start = 0
        for name, c in zip(SPLIT_NAMES, counts):
            for pid in pids[start : start + c]:
                assigned[pid] = name
            start += c
    parts = {name: [] for name in SPLIT_NAMES}
    for s in stays:
        parts[assigned[s.patient_id]].append(s.stay_id)
    return CohortSplit(parts["train"], parts["valid"], parts["test"], fractions)


def restrict_condition(stays, condition, n, seed=0):
    """Keep ``n`` stays of ``condition`` (others untouched), at least one of them positive."""
    from .errors import Infeasible

    idx = [i for i, s in enumerate(stays) if s.condition == condition]
    if not 1 <= n <= len(idx):
        raise ValueError(f"cannot keep {n} of {len(idx)} stays for {condition}")
    if n == len(idx):
        return _like(stays, stays)
    positives = [i for i in idx if stays[i].outcome.positive]
    if not positives:
        raise Infeasible(f"condition {condition} has no positive outcome sample")
    rng = np.random.default_rng(seed)
    anchor = positives[rng.integers(len(positives))]
    rest = [i for i in idx if i != anchor]
    chosen = {anchor, *(rest[j] for j in rng.choice(len(rest), n - 1, replace=False))}
    return _like(stays, [s for i, s in enumerate(stays) if s.condition != condition or i in chosen])


# -- CSV ingestion --------------------------------------------------------

MANIFEST_KEYS = ("stays_csv", "series_csv", "drugs_csv", "outcomes_csv", "task")
STAYS_COLUMNS = ("stay_id", "patient_id", "age", "gender", "race", "condition_icd9", "stay_hours")


def _read_csv(path, required):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: header row required")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        # header is line 1
        return [(lineno, row) for lineno, row in enumerate(reader, start=2)]


def _number(path, lineno, text, what):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, lineno, f"{what} {text!r} is not a number") from None


def load_cohort(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(manifest_path, exc.lineno, exc.msg) from None
    missing = [k for k in MANIFEST_KEYS if k not in manifest]
    if missing:
        raise SchemaError(f"{manifest_path}: manifest missing keys {missing}")
    base = manifest_path.parent
    task = Task.parse(manifest["task"])

    stays_path = base / manifest["stays_csv"]
    stay_rows = {}
    for lineno, row in _read_csv(stays_path, STAYS_COLUMNS):
        sid = row["stay_id"]
        if sid in stay_rows:
            raise SchemaError(f"{stays_path}:{lineno}: duplicate stay_id {sid!r}")
        try:
            cond = assign_primary_condition(row["condition_icd9"])
        except MalformedCode as exc:
            raise ParseError(stays_path, lineno, str(exc)) from None
        stay_rows[sid] = (lineno, row, cond)
    if not stay_rows:
        raise EmptyCohort(f"{stays_path}: manifest lists zero stays")

    series_path = base / manifest["series_csv"]
    obs = defaultdict(lambda: defaultdict(list))
    seen_vars = set()
    for lineno, row in _read_csv(series_path, ("stay_id", "minute", "variable", "value")):
        sid = row["stay_id"]
        if sid not in stay_rows:
            raise ParseError(series_path, lineno, f"unknown stay_id {sid!r}")
        minute = _number(series_path, lineno, row["minute"], "minute")
        var = row["variable"]
        seen_vars.add(var)
        text = (row["value"] or "").strip()
        value = _number(series_path, lineno, text, "value") if text else None
        obs[sid][(minute, var)].append(value)
    variables = list(manifest.get("variables") or sorted(seen_vars))
    var_index = {v: j for j, v in enumerate(variables)}

    drugs = defaultdict(set)
    for lineno, row in _read_csv(base / manifest["drugs_csv"], ("stay_id", "drug_name")):
        drugs[row["stay_id"]].add(row["drug_name"])

    diagnoses = defaultdict(set)
    if manifest.get("diagnoses_csv"):
        diag_path = base / manifest["diagnoses_csv"]
        for lineno, row in _read_csv(diag_path, ("stay_id", "icd9")):
            try:
                diagnoses[row["stay_id"]].add(assign_primary_condition(row["icd9"]))
            except MalformedCode as exc:
                raise ParseError(diag_path, lineno, str(exc)) from None

    outcomes_path = base / manifest["outcomes_csv"]
    label_col = "label_bits" if task.kind == "multilabel" else "label"
    outcomes = {}
    for lineno, row in _read_csv(outcomes_path, ("stay_id", label_col)):
        text = row[label_col].strip()
        try:
            value = tuple(int(ch) for ch in text) if task.kind == "multilabel" else int(text)
            outcomes[row["stay_id"]] = OutcomeLabel(task, value)
        except ValueError as exc:
            raise ParseError(outcomes_path, lineno, str(exc)) from None

    stays = []
    for sid, (lineno, row, cond) in stay_rows.items():
        if sid not in outcomes:
            raise SchemaError(f"{outcomes_path}: no outcome for stay {sid!r}")
        cells = obs.get(sid, {})
        minutes = sorted({m for m, _ in cells})
        series = np.full((len(minutes), len(variables)), np.nan)
        row_of = {m: i for i, m in enumerate(minutes)}
        for (m, var), vals in cells.items():
            if var not in var_index:
                continue
            present = [v for v in vals if v is not None]
            if present:
                series[row_of[m], var_index[var]] = float(np.mean(present))
        hours = _number(stays_path, lineno, row["stay_hours"], "stay_hours")
        age = row["age"].strip()
        if age:
            _number(stays_path, lineno, age, "age")
        stays.append(
            CohortStay(
                stay_id=sid,
                patient_id=row["patient_id"],
                series=series,
                mask=np.isnan(series),
                timestamps=np.asarray(minutes, dtype=np.float64),
                context=encode_context(age, row["gender"], row["race"]),
                condition=cond,
                outcome=outcomes[sid],
                stay_hours=hours,
                drugs=frozenset(drugs.get(sid, ())),
                diagnoses=frozenset(diagnoses.get(sid, ())),
                raw_icd=row["condition_icd9"],
            )
        )
    return Cohort(stays, variables, task)


def write_cohort(stays, variables, out_dir, task, prefix=""):
    """Write ``stays`` in the manifest CSV layout; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = {k: f"{prefix}{k.replace('_csv', '')}.csv" for k in ("stays_csv", "series_csv", "drugs_csv", "outcomes_csv", "diagnoses_csv")}
    task = Task.parse(task)

    def fmt(x):
        return repr(float(x))

    with open(out_dir / names["stays_csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STAYS_COLUMNS)
        for s in stays:
            g = s.context[1 : 1 + len(GENDERS) + 1]
            r = s.context[2 + len(GENDERS) :]
            gender = GENDERS[int(np.argmax(g))] if np.argmax(g) < len(GENDERS) else ""
            race = RACES[int(np.argmax(r))] if np.argmax(r) < len(RACES) else ""
            age = "" if np.isnan(s.context[0]) else fmt(s.context[0])
            raw = s.raw_icd or s.condition
            w.writerow([s.stay_id, s.patient_id, age, gender, race, raw, fmt(s.stay_hours)])
    with open(out_dir / names["series_csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stay_id", "minute", "variable", "value"])
        for s in stays:
            for i, minute in enumerate(s.timestamps):
                for j, var in enumerate(variables):
                    val = "" if s.mask[i, j] else fmt(s.series[i, j])
                    w.writerow([s.stay_id, fmt(minute), var, val])
    with open(out_dir / names["drugs_csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stay_id", "drug_name"])
        for s in stays:
            for d in sorted(s.drugs):
                w.writerow([s.stay_id, d])
    with open(out_dir / names["diagnoses_csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stay_id", "icd9"])
        for s in stays:
            for d in sorted(s.diagnoses):
                w.writerow([s.stay_id, d])
    label_col = "label_bits" if task.kind == "multilabel" else "label"
    with open(out_dir / names["outcomes_csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stay_id", label_col])
        for s in stays:
            v = s.outcome.value
            w.writerow([s.stay_id, "".join(str(b) for b in v) if task.kind == "multilabel" else v])
    manifest = dict(names, task=task.name, variables=list(variables))
    path = out_dir / f"{prefix}manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
