import hashlib
import json

import numpy as np
import pytest

from fedtt.checkpoint import load_predictor, save_predictor
from fedtt.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from fedtt.data import make_windows, read_readings_csv, split_series
from fedtt.fpt import aggregate_checksum
from fedtt.graph import read_adjacency_csv
from fedtt.predictor import HistoricalMean, evaluate
from fedtt.tst import load_transcript, replay_aggregates

SMALL = {
    "synthesis": {"sensor_counts": [6, 5, 7, 5], "length": 300},
    "impute": {"spatial_epochs": 20, "temporal_epochs": 10},
    "federation": {"rounds": 3, "batches": 2, "batch_frames": 16, "hidden": 8, "predictor_epochs": 10},
}


def config(tmp_path, **extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, **extra}))
    return str(path)


def digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = config(root)
    assert main(["gen-data", "--config", cfg, "--out", str(root / "data"), "--seed", "3"]) == EXIT_OK
    return root, cfg


def test_gen_data_layout_and_manifest(dataset):
    root, _ = dataset
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert [c["name"] for c in manifest["cities"]] == ["city0", "city1", "city2", "city3"]
    assert [c["role"] for c in manifest["cities"]] == ["source"] * 3 + ["target"]
    for entry in manifest["cities"]:
        d = root / "data" / entry["name"]
        series = read_readings_csv(d / "readings.csv")
        assert series.sensor_count == entry["sensors"] and len(series) == entry["frames"]
        assert read_adjacency_csv(d / "adjacency.csv").sensor_count == entry["sensors"]


def test_gen_data_is_deterministic(dataset, tmp_path):
    root, cfg = dataset
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "again"), "--seed", "3"]) == EXIT_OK
    assert digest(tmp_path / "again") == digest(root / "data")


def test_impute_flags_previously_missing(tmp_path, capsys):
    cfg = config(tmp_path, synthesis={**SMALL["synthesis"], "missing_rate": 0.2})
    data, out = tmp_path / "raw", tmp_path / "imp"
    assert main(["gen-data", "--config", cfg, "--out", str(data)]) == EXIT_OK
    assert main(["impute", "--config", cfg, "--data", str(data), "--out", str(out)]) == EXIT_OK
    for name in ("city0", "city3"):
        before = read_readings_csv(data / name / "readings.csv")
        after = read_readings_csv(out / name / "readings.csv")
        assert after.availability.all()
        assert np.array_equal(after.imputed, ~before.availability)
        a = before.availability
        assert np.array_equal(after.values[a], before.values[a])
        assert (out / name / "tvi.ckpt").exists()
    report = dict(line.split(" = ") for line in (out / "impute_report.txt").read_text().splitlines())
    for name in ("city0", "city1", "city2", "city3"):
        assert float(report[f"{name}.tvi_mae"]) < float(report[f"{name}.mean_fill_mae"])


def test_impute_keeps_fully_observed_readings(dataset, tmp_path):
    root, cfg = dataset
    out = tmp_path / "imp"
    assert main(["impute", "--config", cfg, "--data", str(root / "data"), "--out", str(out)]) == EXIT_OK
    before = read_readings_csv(root / "data" / "city1" / "readings.csv")
    after = read_readings_csv(out / "city1" / "readings.csv")
    assert np.array_equal(after.values, before.values) and not after.imputed.any()


@pytest.fixture(scope="module")
def transfer_run(dataset):
    root, cfg = dataset
    out = root / "run"
    assert main(["transfer", "--config", cfg, "--data", str(root / "data"), "--out", str(out),
                 "--deterministic"]) == EXIT_OK
    return out


def test_transfer_outputs(transfer_run):
    names = {p.name for p in transfer_run.iterdir()}
    assert {"report.txt", "report.json", "transcript.bin", "predictor.ckpt",
            "adapter_city0.ckpt", "adapter_city1.ckpt", "adapter_city2.ckpt"} <= names
    text = (transfer_run / "report.txt").read_text()
    assert "time." not in text and "baseline.mae.flow" in text
    assert json.loads((transfer_run / "report.json").read_text())["rounds"] == 3


def test_report_checksum_matches_transcript(transfer_run):
    transcript = load_transcript((transfer_run / "transcript.bin").read_bytes())
    report = json.loads((transfer_run / "report.json").read_text())
    assert report["aggregate_checksum"] == aggregate_checksum(transcript)
    assert report["bytes_total"] == transcript.total_bytes()
    replayed = [a for r, _, a in replay_aggregates(transcript, 3) if r >= 1]
    live = [m.values for m in transcript.aggregates()]
    assert all(np.array_equal(a, b) for a, b in zip(replayed, live)) and len(replayed) == len(live)


def test_transfer_is_deterministic(dataset, transfer_run, tmp_path):
    root, cfg = dataset
    out = tmp_path / "again"
    assert main(["transfer", "--config", cfg, "--data", str(root / "data"), "--out", str(out),
                 "--deterministic"]) == EXIT_OK
    assert (out / "report.txt").read_bytes() == (transfer_run / "report.txt").read_bytes()


def test_single_source_reports_degenerate(dataset, tmp_path):
    root, cfg = dataset
    path = tmp_path / "one.json"
    path.write_text(json.dumps({**SMALL, "sources": ["city1"], "target": "city3"}))
    assert main(["transfer", "--config", str(path), "--data", str(root / "data"),
                 "--out", str(tmp_path / "one"), "--deterministic"]) == EXIT_OK
    assert "degenerate = true" in (tmp_path / "one" / "report.txt").read_text()


def test_eval_matches_in_process_and_is_read_only(dataset, transfer_run, capsys):
    root, cfg = dataset
    before = digest(root / "data")
    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--data", str(root / "data"),
                 "--checkpoint", str(transfer_run / "predictor.ckpt")]) == EXIT_OK
    printed = capsys.readouterr().out
    assert digest(root / "data") == before
    model, level = load_predictor(transfer_run / "predictor.ckpt")
    target = read_readings_csv(root / "data" / "city3" / "readings.csv")
    _, _, test, _ = split_series(target)
    assert evaluate(model, make_windows(test), level).table() in printed


def test_eval_of_mean_model_on_constants_is_zero(tmp_path, capsys):
    cfg = config(tmp_path, synthesis={"sensor_counts": [3, 3], "length": 300, "noise": 0.0,
                                      "scales": [[0.0, 0.0, 0.0]] * 2, "offsets": [[5.0, 5.0, 5.0]] * 2})
    data = tmp_path / "flat"
    assert main(["gen-data", "--config", cfg, "--out", str(data)]) == EXIT_OK
    save_predictor(HistoricalMean(), tmp_path / "hm.ckpt")
    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--data", str(data), "--checkpoint", str(tmp_path / "hm.ckpt"),
                 "--split", "train"]) == EXIT_OK
    mae_row = [l for l in capsys.readouterr().out.splitlines() if l.startswith("MAE ")][0]
    assert [float(v) for v in mae_row.split()[1:]] == [0.0, 0.0, 0.0]


def test_unknown_config_key_fails_before_side_effects(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"federation": {"rounds": 2, "wat": 1}}))
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "nothing")]) == EXIT_CONFIG
    assert not (tmp_path / "nothing").exists()
    assert "federation.wat" in capsys.readouterr().err


def test_missing_data_and_checkpoint(dataset, tmp_path):
    root, cfg = dataset
    assert main(["transfer", "--config", cfg, "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["eval", "--config", cfg, "--data", str(root / "data"),
                 "--checkpoint", str(tmp_path / "none.ckpt")]) == EXIT_DATA
    assert main(["transfer", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_checkpoint_sensor_mismatch(dataset, transfer_run, tmp_path):
    root, cfg = dataset
    path = tmp_path / "wrong.json"
    path.write_text(json.dumps({**SMALL, "target": "city2", "sources": ["city0"]}))
    assert main(["eval", "--config", str(path), "--data", str(root / "data"),
                 "--checkpoint", str(transfer_run / "predictor.ckpt")]) == EXIT_DATA
