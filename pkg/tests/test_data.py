import numpy as np
import pytest

from kandiag.data import (
    Dataset,
    SynthSpec,
    batches,
    load_logs,
    load_saved,
    save_dataset,
    split,
    synth_dina,
)
from kandiag.errors import ConfigError, ContractError, IntegrityError, ParseError


def write_dataset(tmp_path, logs_rows, q_rows, k=2):
    logs = tmp_path / "logs.csv"
    q = tmp_path / "q.csv"
    logs.write_text(
        "student_id,exercise_id,score\n" + "\n".join(logs_rows) + "\n",
        encoding="utf-8",
    )
    header = "exercise_id," + ",".join(f"c_{i}" for i in range(k))
    q.write_text(header + "\n" + "\n".join(q_rows) + "\n", encoding="utf-8")
    return logs, q


def student_rows(student, n, score="1"):
    return [f"{student},e{j:03d},{score}" for j in range(n)]


def q_rows(n, k=2):
    return [f"e{j:03d}," + ",".join("1" for _ in range(k)) for j in range(n)]


def test_filter_drops_students_below_threshold(tmp_path):
    rows = student_rows("thin", 14) + student_rows("ok", 15)
    logs, q = write_dataset(tmp_path, rows, q_rows(15))
    ds = load_logs(logs, q)
    assert "thin" not in ds.student_ids
    assert "ok" in ds.student_ids
    assert ds.n_students == 1


def test_parse_error_names_line(tmp_path):
    rows = student_rows("s1", 15)
    rows.insert(3, "garbage-without-commas")
    logs, q = write_dataset(tmp_path, rows, q_rows(15))
    with pytest.raises(ParseError, match="line 5"):
        load_logs(logs, q)


def test_bad_score_rejected(tmp_path):
    logs, q = write_dataset(tmp_path, ["s1,e000,2"], q_rows(1))
    with pytest.raises(ParseError, match="score"):
        load_logs(logs, q)


def test_exercise_missing_from_q(tmp_path):
    rows = student_rows("s1", 15) + ["s1,e999,1"]
    logs, q = write_dataset(tmp_path, rows, q_rows(15))
    with pytest.raises(IntegrityError, match="e999"):
        load_logs(logs, q)


def test_empty_q_row_rejected(tmp_path):
    logs, q = write_dataset(tmp_path, student_rows("s1", 1), ["e000,0,0"])
    with pytest.raises(IntegrityError):
        load_logs(logs, q)


def test_duplicates_keep_last(tmp_path):
    rows = student_rows("s1", 15, score="0") + ["s1,e003,1"]
    logs, q = write_dataset(tmp_path, rows, q_rows(15))
    ds = load_logs(logs, q)
    e3 = ds.exercise_ids["e003"]
    scores = {t.exercise: t.score for t in ds.train}
    assert scores[e3] == 1
    assert len(ds.train) == 15  # duplicate collapsed


def test_ids_are_dense_bijection(tmp_path):
    rows = student_rows("zeta", 15) + student_rows("alpha", 15)
    logs, q = write_dataset(tmp_path, rows, q_rows(15))
    ds = load_logs(logs, q)
    assert sorted(ds.student_ids.values()) == [0, 1]
    assert ds.student_ids["alpha"] == 0  # sorted original ids
    assert sorted(ds.exercise_ids.values()) == list(range(15))


def test_split_seven_three():
    ds, _ = synth_dina(SynthSpec(n_students=4, n_exercises=10, seed=1))
    out = split(ds, seed=5)
    for s in range(4):
        n_train = sum(1 for t in out.train if t.student == s)
        n_test = sum(1 for t in out.test if t.student == s)
        assert (n_train, n_test) == (7, 3)


def test_split_rounds_half_up():
    ds, _ = synth_dina(SynthSpec(n_students=2, n_exercises=15, seed=1))
    out = split(ds, seed=5)
    for s in range(2):
        n_train = sum(1 for t in out.train if t.student == s)
        assert n_train == 11  # round(10.5) rounds up


def test_split_deterministic_and_disjoint():
    ds, _ = synth_dina(SynthSpec(n_students=6, n_exercises=20, seed=3))
    a = split(ds, seed=9)
    b = split(ds, seed=9)
    assert a.train == b.train and a.test == b.test
    seen = {(t.student, t.exercise) for t in a.train}
    assert all((t.student, t.exercise) not in seen for t in a.test)


def test_split_rejects_already_split():
    ds, _ = synth_dina(SynthSpec(n_students=2, n_exercises=16, seed=0))
    out = split(ds, seed=1)
    with pytest.raises(ContractError):
        split(out, seed=2)


def test_batches_block_sizes():
    rng = np.random.default_rng(0)
    sizes = [len(b) for b in batches(300, 128, rng)]
    assert sizes == [128, 128, 44]
    rng = np.random.default_rng(0)
    assert len(list(batches(300, 1, rng))) == 300


def test_batches_deterministic_and_complete():
    a = np.concatenate(list(batches(50, 7, np.random.default_rng(4))))
    b = np.concatenate(list(batches(50, 7, np.random.default_rng(4))))
    assert np.array_equal(a, b)
    assert sorted(a) == list(range(50))


def test_synth_degenerate_rates_follow_mastery():
    spec = SynthSpec(n_students=40, n_exercises=20, n_concepts=3,
                     guess_range=(1e-12, 1e-12), slip_range=(1e-12, 1e-12), seed=2)
    ds, mastery = synth_dina(spec)
    nt = np.all(mastery[:, None, :] >= ds.Q[None, :, :], axis=2)
    responses = {(t.student, t.exercise): t.score for t in ds.train}
    for i in range(40):
        for j in range(20):
            assert responses[(i, j)] == int(nt[i, j])


def test_synth_rejects_out_of_range_rates():
    with pytest.raises(ConfigError):
        synth_dina(SynthSpec(guess_range=(0.0, 0.2)))
    with pytest.raises(ConfigError):
        SynthSpec(guess_range=(0.6, 0.7)).validate()  # guessing above chance
    with pytest.raises(ConfigError):
        SynthSpec(slip_range=(0.5, 0.9)).validate()
    with pytest.raises(ConfigError):
        SynthSpec(n_students=0).validate()


def test_synth_full_mastery_rate_matches_slip():
    spec = SynthSpec(n_students=300, n_exercises=30, n_concepts=5, seed=7)
    ds, mastery = synth_dina(spec)
    full = np.flatnonzero(mastery.sum(axis=1) == 5)
    assert len(full) > 5
    responses = np.zeros((300, 30))
    for t in ds.train:
        responses[t.student, t.exercise] = t.score
    rate = responses[full].mean()
    # full-mastery students answer every exercise at 1 - slip on average
    expected = 1.0 - np.mean([0.05, 0.25]) / 1.0  # uniform slip over its range
    assert abs(rate - expected) <= 0.03


def test_roundtrip_preserves_triplets_and_split(tmp_path):
    ds, _ = synth_dina(SynthSpec(n_students=8, n_exercises=18, seed=11))
    ds = split(ds, seed=21)
    save_dataset(ds, tmp_path / "out")
    back = load_saved(tmp_path / "out")
    assert back.n_students == ds.n_students
    assert np.array_equal(back.Q, ds.Q)
    assert sorted(back.train) == sorted(ds.train)
    assert sorted(back.test) == sorted(ds.test)


def test_manifest_records_id_maps(tmp_path):
    ds, _ = synth_dina(SynthSpec(n_students=3, n_exercises=16, seed=0))
    paths = save_dataset(ds, tmp_path / "d")
    import json

    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["student_ids"] == ds.student_ids
    assert manifest["filter_threshold"] == ds.filter_threshold
