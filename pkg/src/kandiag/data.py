"""Response-log ingestion, filtering, splitting, batching, and a synthetic
guess/slip generator that doubles as a ground-truth oracle.

File formats
------------
response log : CSV, header ``student_id,exercise_id,score``, score in {0,1}
Q matrix     : CSV, header ``exercise_id,c_0,...,c_{K-1}``, entries in {0,1}
manifest     : JSON recording N/M/K, id maps, split seed, filter threshold
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, IntegrityError, ParseError

MIN_LOGS_PER_STUDENT = 15


@dataclass(frozen=True, order=True)
class ResponseTriplet:
    student: int
    exercise: int
    score: int


@dataclass
class Dataset:
    n_students: int
    n_exercises: int
    n_concepts: int
    Q: np.ndarray
    train: list[ResponseTriplet]
    test: list[ResponseTriplet]
    student_ids: dict[str, int]  # original id -> dense id
    exercise_ids: dict[str, int]
    source: str = ""
    split_seed: int | None = None
    filter_threshold: int = MIN_LOGS_PER_STUDENT

    @property
    def is_split(self) -> bool:
        return self.split_seed is not None

    def all_triplets(self) -> list[ResponseTriplet]:
        return self.train + self.test

    def arrays(self, which: str = "train"):
        """(students, exercises, scores) as aligned integer arrays."""
        trips = self.train if which == "train" else self.test
        s = np.array([t.student for t in trips], dtype=np.intp)
        e = np.array([t.exercise for t in trips], dtype=np.intp)
        r = np.array([t.score for t in trips], dtype=np.float64)
        return s, e, r

    def train_exercises_by_student(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for t in self.train:
            out.setdefault(t.student, []).append(t.exercise)
        return out


def _read_csv_rows(path: Path, expect_header: list[str] | None = None):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if expect_header is not None and header[: len(expect_header)] != expect_header:
        raise ParseError(
            f"{path}: line 1: expected header {','.join(expect_header)}, got {lines[0]!r}"
        )
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rows.append((lineno, [c.strip() for c in line.split(",")]))
    return header, rows


def load_qmatrix(path: str | Path) -> tuple[np.ndarray, dict[str, int]]:
    """Parse the exercise-concept matrix; returns (Q, exercise id map)."""
    path = Path(path)
    header, rows = _read_csv_rows(path)
    if not header or header[0] != "exercise_id":
        raise ParseError(f"{path}: line 1: first column must be exercise_id")
    k = len(header) - 1
    if k < 1:
        raise ParseError(f"{path}: line 1: no concept columns")
    entries: dict[str, list[int]] = {}
    order: list[str] = []
    for lineno, cells in rows:
        if len(cells) != k + 1:
            raise ParseError(f"{path}: line {lineno}: expected {k + 1} fields, got {len(cells)}")
        ex = cells[0]
        vals = []
        for c in cells[1:]:
            if c not in ("0", "1"):
                raise ParseError(f"{path}: line {lineno}: Q entries must be 0 or 1, got {c!r}")
            vals.append(int(c))
        if sum(vals) == 0:
            raise IntegrityError(f"{path}: line {lineno}: exercise {ex} relates to no concept")
        if ex not in entries:
            order.append(ex)
        entries[ex] = vals
    if not entries:
        raise ParseError(f"{path}: no exercise rows")
    exercise_ids = {ex: i for i, ex in enumerate(sorted(order))}
    Q = np.zeros((len(entries), k), dtype=np.float64)
    for ex, vals in entries.items():
        Q[exercise_ids[ex]] = vals
    return Q, exercise_ids


def load_logs(logs_path: str | Path, qmatrix_path: str | Path,
              min_logs: int = MIN_LOGS_PER_STUDENT) -> Dataset:
    """Load triplets against a Q matrix; drops thin students, densifies ids.

    Students with fewer than ``min_logs`` responses are removed. Duplicate
    (student, exercise) pairs keep the last occurrence. The returned dataset
    is unsplit: every triplet sits in ``train`` and ``split_seed`` is None.
    """
    logs_path = Path(logs_path)
    Q, exercise_ids = load_qmatrix(qmatrix_path)
    _, rows = _read_csv_rows(logs_path, ["student_id", "exercise_id", "score"])
    raw: dict[str, dict[str, int]] = {}
    for lineno, cells in rows:
        if len(cells) != 3:
            raise ParseError(f"{logs_path}: line {lineno}: expected 3 fields, got {len(cells)}")
        student, exercise, score = cells
        if score not in ("0", "1"):
            raise ParseError(f"{logs_path}: line {lineno}: score must be 0 or 1, got {score!r}")
        if exercise not in exercise_ids:
            raise IntegrityError(
                f"{logs_path}: line {lineno}: exercise {exercise} has no Q-matrix row"
            )
        raw.setdefault(student, {})[exercise] = int(score)
    kept = sorted(s for s, logs in raw.items() if len(logs) >= min_logs)
    if not kept:
        raise IntegrityError(
            f"{logs_path}: no student has at least {min_logs} response logs"
        )
    student_ids = {s: i for i, s in enumerate(kept)}
    triplets = [
        ResponseTriplet(student_ids[s], exercise_ids[e], r)
        for s in kept
        for e, r in sorted(raw[s].items())
    ]
    return Dataset(
        n_students=len(kept),
        n_exercises=Q.shape[0],
        n_concepts=Q.shape[1],
        Q=Q,
        train=triplets,
        test=[],
        student_ids=student_ids,
        exercise_ids=exercise_ids,
        source=str(logs_path),
        split_seed=None,
        filter_threshold=min_logs,
    )


def split(dataset: Dataset, ratio: float = 0.7, seed: int = 0) -> Dataset:
    """Per-student shuffled split; train size rounds half up.

    Each student's logs are put in a canonical order, shuffled by the seed,
    and cut at round(ratio * n); the result is independent of input order.
    """
    if dataset.is_split:
        raise ContractError("dataset is already split")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    by_student: dict[int, list[ResponseTriplet]] = {}
    for t in dataset.all_triplets():
        by_student.setdefault(t.student, []).append(t)
    rng = np.random.default_rng(seed)
    train: list[ResponseTriplet] = []
    test: list[ResponseTriplet] = []
    for s in sorted(by_student):
        logs = sorted(by_student[s], key=lambda t: t.exercise)
        perm = rng.permutation(len(logs))
        cut = int(np.floor(ratio * len(logs) + 0.5))  # round half up
        for j, p in enumerate(perm):
            (train if j < cut else test).append(logs[p])
    return Dataset(
        n_students=dataset.n_students,
        n_exercises=dataset.n_exercises,
        n_concepts=dataset.n_concepts,
        Q=dataset.Q,
        train=train,
        test=test,
        student_ids=dataset.student_ids,
        exercise_ids=dataset.exercise_ids,
        source=dataset.source,
        split_seed=seed,
        filter_threshold=dataset.filter_threshold,
    )


def batches(n_items: int, batch_size: int, rng: np.random.Generator):
    """Yield index blocks covering one shuffled pass; the short tail is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be at least 1, got {batch_size}")
    perm = rng.permutation(n_items)
    for start in range(0, n_items, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class SynthSpec:
    n_students: int = 300
    n_exercises: int = 30
    n_concepts: int = 5
    guess_range: tuple[float, float] = (0.05, 0.25)
    slip_range: tuple[float, float] = (0.05, 0.25)
    mastery_prevalence: float = 0.5
    max_concepts_per_exercise: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.n_students < 1 or self.n_exercises < 1 or self.n_concepts < 1:
            raise ConfigError("synthetic roster sizes must be positive")
        g_lo, g_hi = self.guess_range
        s_lo, s_hi = self.slip_range
        if not (0.0 < g_lo <= g_hi < 0.5):
            raise ConfigError(f"guess range must sit inside (0, 0.5), got {self.guess_range}")
        if not (0.0 < s_lo <= s_hi < 0.5):
            raise ConfigError(f"slip range must sit inside (0, 0.5), got {self.slip_range}")
        if not 0.0 < self.mastery_prevalence < 1.0:
            raise ConfigError("mastery prevalence must be in (0, 1)")
        if self.max_concepts_per_exercise < 1:
            raise ConfigError("exercises need at least one concept")


def synth_dina(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    """Sample a full response table from the guess/slip generative process.

    Every student answers every exercise: a response is correct with
    probability 1 - slip when all of the exercise's concepts are mastered,
    and with probability guess otherwise. Returns the unsplit dataset plus
    the true binary mastery matrix used to generate it.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    N, M, K = spec.n_students, spec.n_exercises, spec.n_concepts
    mastery = (rng.random((N, K)) < spec.mastery_prevalence).astype(np.float64)
    Q = np.zeros((M, K), dtype=np.float64)
    for j in range(M):
        width = rng.integers(1, min(spec.max_concepts_per_exercise, K) + 1)
        Q[j, rng.choice(K, size=width, replace=False)] = 1.0
    guess = rng.uniform(*spec.guess_range, size=M)
    slip = rng.uniform(*spec.slip_range, size=M)
    # nt[i, j] = 1 iff student i masters every concept of exercise j
    nt = np.all(mastery[:, None, :] >= Q[None, :, :], axis=2)
    p_correct = np.where(nt, 1.0 - slip[None, :], guess[None, :])
    responses = (rng.random((N, M)) < p_correct).astype(int)
    triplets = [
        ResponseTriplet(i, j, int(responses[i, j]))
        for i in range(N)
        for j in range(M)
    ]
    dataset = Dataset(
        n_students=N,
        n_exercises=M,
        n_concepts=K,
        Q=Q,
        train=triplets,
        test=[],
        student_ids={f"s{i:05d}": i for i in range(N)},
        exercise_ids={f"e{j:05d}": j for j in range(M)},
        source=f"synthetic(seed={spec.seed})",
        split_seed=None,
        filter_threshold=0,
    )
    return dataset, mastery


def save_dataset(dataset: Dataset, out_dir: str | Path) -> dict[str, Path]:
    """Write logs.csv, qmatrix.csv, and manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inv_students = {i: s for s, i in dataset.student_ids.items()}
    inv_exercises = {i: e for e, i in dataset.exercise_ids.items()}

    logs_path = out / "logs.csv"
    lines = ["student_id,exercise_id,score"]
    for t in sorted(dataset.all_triplets(), key=lambda t: (t.student, t.exercise)):
        lines.append(f"{inv_students[t.student]},{inv_exercises[t.exercise]},{t.score}")
    logs_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    q_path = out / "qmatrix.csv"
    k = dataset.n_concepts
    qlines = ["exercise_id," + ",".join(f"c_{i}" for i in range(k))]
    for j in range(dataset.n_exercises):
        row = ",".join(str(int(v)) for v in dataset.Q[j])
        qlines.append(f"{inv_exercises[j]},{row}")
    q_path.write_text("\n".join(qlines) + "\n", encoding="utf-8")

    manifest_path = out / "manifest.json"
    manifest = {
        "n_students": dataset.n_students,
        "n_exercises": dataset.n_exercises,
        "n_concepts": dataset.n_concepts,
        "student_ids": dataset.student_ids,
        "exercise_ids": dataset.exercise_ids,
        "split_seed": dataset.split_seed,
        "filter_threshold": dataset.filter_threshold,
        "source": dataset.source,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return {"logs": logs_path, "qmatrix": q_path, "manifest": manifest_path}


def load_saved(out_dir: str | Path) -> Dataset:
    """Load a directory written by save_dataset, reapplying any split."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    dataset = load_logs(out / "logs.csv", out / "qmatrix.csv",
                        min_logs=manifest["filter_threshold"])
    if manifest["split_seed"] is not None:
        dataset = split(dataset, seed=manifest["split_seed"])
    return dataset
