import io
import json

import numpy as np
import pytest

from modellock import data, harness, locker, nn

KEY = bytes.fromhex("00112233445566778899aabbccddeeff")

ARCH = """\
input 1x12x12
conv 5 3x3 stride 1 pad valid relu
maxpool 2x2 stride 2
flatten
dense 24 relu
dense 4 linear
"""


@pytest.fixture(scope="module")
def task():
    arch = nn.parse_architecture(ARCH)
    train_ds = data.synthetic_dataset(num_classes=4, per_class=50, image_size=12, seed=21)
    test_ds = data.synthetic_dataset(num_classes=4, per_class=20, image_size=12, seed=22)
    model = nn.build_model(arch, seed=23)
    model, _ = nn.train(model, train_ds,
                        nn.TrainConfig(epochs=6, batch_size=25, learning_rate=0.1, seed=24))
    locked = locker.lock_model(model, KEY)
    return model, locked, train_ds, test_ds


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_plain_and_locked_reports_match_exactly(task):
    model, locked, _, test_ds = task
    plain = harness.evaluate(model, test_ds)
    with_key = harness.evaluate(locked, test_ds, key=KEY)
    assert with_key.accuracy == plain.accuracy
    assert with_key.per_class_correct == plain.per_class_correct
    assert with_key.nan_prediction_fraction == plain.nan_prediction_fraction == 0.0
    assert plain.subject == "plain" and with_key.subject == "locked"
    assert with_key.unlock_mode == "per-pass"
    assert plain.sample_count == len(test_ds)


def test_per_sample_predictions_identical(task):
    model, locked, _, test_ds = task
    view = locker.unlock_model(locked, KEY)
    plain_logits = nn.forward_batch(model, test_ds.images)
    view_logits = nn.forward_batch(view, test_ds.images)
    assert plain_logits.tobytes() == view_logits.tobytes()


def test_accuracy_is_correct_over_n(task):
    model, _, _, test_ds = task
    report = harness.evaluate(model, test_ds)
    assert report.accuracy == sum(report.per_class_correct) / report.sample_count
    assert report.per_class_total == [20, 20, 20, 20]


def test_locked_requires_key(task):
    _, locked, _, test_ds = task
    with pytest.raises(ValueError):
        harness.evaluate(locked, test_ds)


def test_empty_dataset_is_an_error(task):
    model, _, _, test_ds = task
    empty = data.Dataset("empty", np.zeros((0, 1, 12, 12), np.float32),
                         np.zeros(0, np.int64), 4)
    with pytest.raises(ValueError):
        harness.evaluate(model, empty)


def test_shape_mismatch_is_an_error(task):
    model, _, _, _ = task
    other = data.synthetic_dataset(num_classes=4, per_class=2, image_size=9, seed=0)
    with pytest.raises(nn.ModelSpecError):
        harness.evaluate(model, other)


def test_batch_size_does_not_change_results(task):
    model, _, _, test_ds = task
    a = harness.evaluate(model, test_ds, batch_size=7)
    b = harness.evaluate(model, test_ds, batch_size=256)
    assert a == b


# ---------------------------------------------------------------------------
# wrong_key_sweep
# ---------------------------------------------------------------------------

def test_sweep_report_shape_and_determinism(task):
    _, locked, _, test_ds = task
    a = harness.wrong_key_sweep(locked, test_ds, n_keys=8, seed=3, true_key=KEY)
    b = harness.wrong_key_sweep(locked, test_ds, n_keys=8, seed=3, true_key=KEY)
    assert a == b
    assert len(a.per_key_accuracy) == 8 and a.n_keys == 8 and a.key_seed == 3
    assert a.mean == pytest.approx(np.mean(a.per_key_accuracy))
    assert a.min == min(a.per_key_accuracy) and a.max == max(a.per_key_accuracy)


def test_sweep_degrades_to_chance(task):
    _, locked, _, test_ds = task
    report = harness.wrong_key_sweep(locked, test_ds, n_keys=8, seed=3, true_key=KEY)
    assert report.mean <= 0.45  # chance is 0.25 on this 4-class task
    assert report.mean_nan_fraction > 0.5


def test_sweep_with_forced_true_key_matches_correct_eval(task):
    _, locked, _, test_ds = task
    correct = harness.evaluate(locked, test_ds, key=KEY)
    forced = harness.wrong_key_sweep(locked, test_ds, n_keys=1, seed=0, keys=[KEY])
    assert forced.per_key_accuracy == [correct.accuracy]


def test_generated_keys_exclude_true_key():
    keys = harness.generate_wrong_keys(64, seed=5, true_key=KEY)
    assert KEY not in keys and len(keys) == 64
    assert len(set(keys)) == 64
    assert keys == harness.generate_wrong_keys(64, seed=5, true_key=KEY)


def test_sweep_validates_arguments(task):
    _, locked, _, test_ds = task
    with pytest.raises(ValueError):
        harness.wrong_key_sweep(locked, test_ds, n_keys=0, seed=1)
    with pytest.raises(ValueError):
        harness.wrong_key_sweep(locked, test_ds, n_keys=3, seed=1, keys=[KEY])


# ---------------------------------------------------------------------------
# benchmark_latency
# ---------------------------------------------------------------------------

def test_latency_report_counts_and_fields(task):
    model, locked, _, test_ds = task
    report = harness.benchmark_latency(model, locked, KEY, test_ds, n_trials=6, warmup=2)
    assert len(report.plain_times) == 6 and len(report.locked_times) == 6
    assert report.n_trials == 6 and report.warmup_trials == 2
    assert report.plain_mean == pytest.approx(np.mean(report.plain_times))
    assert report.locked_mean == pytest.approx(np.mean(report.locked_times))
    assert report.overhead_ratio == pytest.approx(report.locked_mean / report.plain_mean)
    assert report.unlock_mode == "per-query"
    assert report.timer == "time.perf_counter" and report.timer_resolution > 0
    assert report.param_count == locked.param_count


def test_latency_rejects_bad_trials(task):
    model, locked, _, test_ds = task
    with pytest.raises(ValueError):
        harness.benchmark_latency(model, locked, KEY, test_ds, n_trials=0)


# ---------------------------------------------------------------------------
# fine-tuning attack
# ---------------------------------------------------------------------------

def test_attack_curve_structure(task):
    _, locked, train_ds, test_ds = task
    manifest = data.manifest_split(train_ds, 0.10, seed=31)
    wrong = harness.generate_wrong_keys(1, seed=32, true_key=KEY)[0]
    cfg = nn.TrainConfig(epochs=4, batch_size=10, learning_rate=0.1, seed=33)
    curve = harness.fine_tune_attack(locked, wrong, manifest, test_ds, cfg, fraction=0.10)
    assert len(curve.per_epoch_val_accuracy) == 4
    assert all(0.0 <= v <= 1.0 for v in curve.per_epoch_val_accuracy)
    assert curve.final_accuracy == curve.per_epoch_val_accuracy[-1]
    assert curve.config["arm"] == "attack"
    assert curve.config["init_mode"] == "unlocked"
    assert curve.config["fraction"] == 0.10
    assert curve.config["epochs"] == 4
    assert curve.config["manifest_size"] == len(manifest)
    assert "key" not in " ".join(map(str, curve.config.keys())).lower()


def test_attack_stays_near_chance_while_control_learns(task):
    _, locked, train_ds, test_ds = task
    manifest = data.manifest_split(train_ds, 0.25, seed=41)
    wrong = harness.generate_wrong_keys(1, seed=42, true_key=KEY)[0]
    cfg = nn.TrainConfig(epochs=10, batch_size=10, learning_rate=0.1, seed=43)
    attack = harness.fine_tune_attack(locked, wrong, manifest, test_ds, cfg)
    control = harness.fine_tune_control(locked, 44, manifest, test_ds, cfg)
    assert attack.final_accuracy <= 0.40  # chance 0.25 on 4 classes
    assert control.final_accuracy >= 0.60
    assert attack.nonfinite_epochs > 0
    assert control.config["arm"] == "control"


def test_attack_is_deterministic(task):
    _, locked, train_ds, test_ds = task
    manifest = data.manifest_split(train_ds, 0.10, seed=51)
    wrong = harness.generate_wrong_keys(1, seed=52, true_key=KEY)[0]
    cfg = nn.TrainConfig(epochs=3, batch_size=10, learning_rate=0.1, seed=53)
    a = harness.fine_tune_attack(locked, wrong, manifest, test_ds, cfg)
    b = harness.fine_tune_attack(locked, wrong, manifest, test_ds, cfg)
    assert a == b


def test_attack_raw_init_mode(task):
    _, locked, train_ds, test_ds = task
    manifest = data.manifest_split(train_ds, 0.10, seed=61)
    wrong = harness.generate_wrong_keys(1, seed=62, true_key=KEY)[0]
    cfg = nn.TrainConfig(epochs=2, batch_size=10, learning_rate=0.1, seed=63)
    curve = harness.fine_tune_attack(locked, wrong, manifest, test_ds, cfg, init_mode="raw")
    assert curve.config["init_mode"] == "raw"
    assert len(curve.per_epoch_val_accuracy) == 2
    with pytest.raises(ValueError):
        harness.fine_tune_attack(locked, wrong, manifest, test_ds, cfg, init_mode="bogus")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def all_reports(task):
    model, locked, train_ds, test_ds = task
    manifest = data.manifest_split(train_ds, 0.10, seed=71)
    wrong = harness.generate_wrong_keys(1, seed=72, true_key=KEY)[0]
    return [
        harness.evaluate(model, test_ds),
        harness.wrong_key_sweep(locked, test_ds, n_keys=2, seed=73),
        harness.benchmark_latency(model, locked, KEY, test_ds, n_trials=2, warmup=1),
        harness.fine_tune_attack(locked, wrong, manifest, test_ds,
                                 nn.TrainConfig(epochs=2, batch_size=10, seed=74)),
    ]


def test_json_round_trip(task):
    for report in all_reports(task):
        blob = io.StringIO()
        harness.emit_report(report, "json", blob)
        parsed = json.loads(blob.getvalue())
        assert parsed["schema"].startswith("modellock/")
        assert harness.report_from_dict(parsed) == report


def test_csv_headers(task):
    expected_first = {
        harness.EvalReport: "accuracy,nan_prediction_fraction,sample_count",
        harness.SweepReport: "key_index,accuracy",
        harness.LatencyReport: "trial,plain_seconds,locked_seconds",
        harness.AttackCurve: "epoch,val_accuracy",
    }
    for report in all_reports(task):
        blob = io.StringIO()
        harness.emit_report(report, "csv", blob)
        lines = blob.getvalue().splitlines()
        assert lines[0] == expected_first[type(report)]
        assert len(lines) > 1


def test_attack_csv_has_one_row_per_epoch(task):
    report = all_reports(task)[3]
    blob = io.StringIO()
    harness.emit_report(report, "csv", blob)
    lines = blob.getvalue().splitlines()
    assert len(lines) == 1 + len(report.per_epoch_val_accuracy)
    assert lines[1].startswith("0,")


def test_text_format_renders(task):
    for report in all_reports(task):
        blob = io.StringIO()
        harness.emit_report(report, "text", blob)
        assert blob.getvalue().strip()


def test_unknown_format_rejected(task):
    report = all_reports(task)[0]
    with pytest.raises(ValueError):
        harness.emit_report(report, "xml", io.StringIO())


def test_emit_to_path(task, tmp_path):
    report = all_reports(task)[0]
    path = tmp_path / "report.json"
    harness.emit_report(report, "json", path)
    assert harness.report_from_dict(json.loads(path.read_text())) == report


def test_unknown_schema_rejected():
    with pytest.raises(ValueError):
        harness.report_from_dict({"schema": "modellock/not-a-thing/9"})
