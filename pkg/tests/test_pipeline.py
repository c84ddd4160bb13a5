import json
import subprocess
import sys

import numpy as np
import pytest

from roomecho import evaluation as ev
from roomecho import dataset as ds
from roomecho import dsp
from roomecho import model as mdl
from roomecho import training as tr
from roomecho.errors import ConfigurationError, SplitInfeasibleError


# ---------------------------------------------------------------------------
# Generation and manifest
# ---------------------------------------------------------------------------

def test_manifest_counts(toy_dataset):
    man = toy_dataset.manifest
    assert len(man["rooms"]) == 4
    assert len(man["rir_index"]) == 4 * 5 * 3
    keys = [(r["room_id"], r["receiver_idx"], r["source_idx"])
            for r in man["rir_index"]]
    assert len(set(keys)) == len(keys)  # no duplicate triples


def test_generation_deterministic(tmp_path):
    cfg = ds.GenConfig(rooms_per_category=1, n_sources=3, n_receivers=2, seed=5)
    ds.generate_dataset(cfg, tmp_path / "a")
    ds.generate_dataset(cfg, tmp_path / "b")
    man_a = (tmp_path / "a" / "manifest.json").read_bytes()
    man_b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert man_a == man_b
    for room in json.loads(man_a)["rooms"]:
        fa = tmp_path / "a" / room["rir_file"]
        fb = tmp_path / "b" / room["rir_file"]
        assert fa.read_bytes() == fb.read_bytes()


def test_rir_records_valid(toy_dataset):
    scfg = toy_dataset.sim_config
    for key in toy_dataset.all_examples()[:10]:
        rec = toy_dataset.rir(*key)
        assert rec.waveform.shape == (scfg.rir_length,)
        assert np.all(np.isfinite(rec.waveform))
        d = np.linalg.norm(rec.source - rec.receiver)
        first = int(np.argmax(rec.waveform != 0))
        assert first >= round(d / scfg.speed_of_sound * scfg.sample_rate) - 1


def test_material_seed_changes_t60(tmp_path):
    # same geometry sampling, different seeds -> different materials -> the
    # simulated T60 distributions differ
    t60s = {}
    for seed in (1, 2):
        cfg = ds.GenConfig(
            rooms_per_category=1, n_sources=3, n_receivers=2, seed=seed,
            categories=(ds.CategorySpec("fixedbox", "shoebox",
                                        (4.0, 4.0), (5.0, 5.0), (3.0, 3.0)),))
        root = tmp_path / f"s{seed}"
        ds.generate_dataset(cfg, root)
        data = ds.Dataset(root)
        vals = []
        for key in data.all_examples():
            est, valid = dsp.metric_t60(data.rir(*key).waveform.astype(float))
            if valid:
                vals.append(est)
        t60s[seed] = np.mean(vals) if vals else None
        assert data.room(data.room_ids[0]).volume == pytest.approx(60.0)
    assert t60s[1] is not None and t60s[2] is not None
    assert abs(t60s[1] - t60s[2]) > 0.01


def test_reference_candidates_cover_k(toy_dataset):
    for room_id in toy_dataset.room_ids:
        cands = toy_dataset.reference_candidates(room_id)
        assert len(cands) == 5  # min(10, n_src)


def test_split_referenced_rirs_valid(toy_dataset):
    scfg = toy_dataset.sim_config
    split = ds.make_split(toy_dataset, "seen", seed=2)
    for key in split.train_examples(toy_dataset) + split.test_examples(toy_dataset):
        rec = toy_dataset.rir(*key)
        assert rec.waveform.shape == (scfg.rir_length,)
        assert np.all(np.isfinite(rec.waveform))
        d = np.linalg.norm(rec.source - rec.receiver)
        first = int(np.argmax(rec.waveform != 0))
        assert first >= round(d / scfg.speed_of_sound * scfg.sample_rate) - 1


def test_random_across_worse_than_random_same(toy_dataset):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    across = ev.evaluate(toy_dataset, split, "random-across", k=3, seed=3)
    same = ev.evaluate(toy_dataset, split, "random-same", k=3, seed=3)
    assert across.aggregates["mean_edt_err_s"] >= same.aggregates["mean_edt_err_s"]
    assert across.aggregates["mean_c50_err_db"] >= same.aggregates["mean_c50_err_db"]


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def test_seen_split_partitions_receivers(toy_dataset):
    split = ds.make_split(toy_dataset, "seen", seed=3)
    for room_id in toy_dataset.room_ids:
        train = set(split.train_receivers[room_id])
        test = set(split.test_receivers[room_id])
        assert train | test == {0, 1, 2}
        assert not train & test
        assert len(train) == 2 and len(test) == 1  # floor(0.9*3)=2
    tr_ex = set(split.train_examples(toy_dataset))
    te_ex = set(split.test_examples(toy_dataset))
    assert not tr_ex & te_ex
    assert len(tr_ex) + len(te_ex) == len(toy_dataset.all_examples())


def test_seen_split_ninety_ten():
    # synthetic 10-receiver room metadata check via make_split arithmetic
    n = 10
    n_train = max(1, min(int(np.floor(0.9 * n)), n - 1))
    assert n_train == 9


def test_unseen_split_partitions_rooms(toy_dataset):
    split = ds.make_split(toy_dataset, "unseen", seed=4)
    assert not set(split.train_rooms) & set(split.test_rooms)
    assert set(split.train_rooms) | set(split.test_rooms) == set(toy_dataset.room_ids)
    cats = toy_dataset.categories()
    for cat, rooms in cats.items():
        test_in_cat = [r for r in split.test_rooms if r in rooms]
        assert len(test_in_cat) == 1  # 2 rooms per category -> 1/1


def test_split_deterministic_and_roundtrip(toy_dataset, tmp_path):
    a = ds.make_split(toy_dataset, "unseen", seed=9)
    b = ds.make_split(toy_dataset, "unseen", seed=9)
    assert a == b
    ds.save_split(tmp_path / "s.json", a)
    back = ds.load_split(tmp_path / "s.json")
    assert back == a


def test_split_infeasible_single_receiver(tmp_path):
    cfg = ds.GenConfig(rooms_per_category=1, n_sources=3, n_receivers=1, seed=6,
                       categories=(ds.DEFAULT_CATEGORIES[0],))
    root = tmp_path / "one"
    ds.generate_dataset(cfg, root)
    data = ds.Dataset(root)
    with pytest.raises(SplitInfeasibleError):
        ds.make_split(data, "seen", seed=0)
    with pytest.raises(SplitInfeasibleError):
        ds.make_split(data, "unseen", seed=0)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_training(toy_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    tcfg = tr.TrainConfig(steps=6, batch_size=2, lr=1e-3, seed=2, k_refs=3,
                          width="tiny", log_every=0)
    mcfg = tr.model_config_for(tcfg)
    ckpt = tr.train(toy_dataset, split, mcfg, tcfg, out)
    return out, split, tcfg, mcfg, ckpt


def test_train_writes_artifacts(tiny_training):
    out, *_ , ckpt = tiny_training
    assert ckpt.with_suffix(".json").exists()
    assert ckpt.with_suffix(".f32").exists()
    assert (out / "loss_log.csv").exists()
    assert (out / "loss_log.json").exists()
    assert (out / "loss_curve.png").exists()
    log = json.loads((out / "loss_log.json").read_text())
    assert len(log) == 6
    assert all(np.isfinite(r["loss"]) for r in log)


def test_train_resume_reproduces_losses(toy_dataset, tmp_path):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    mcfg = mdl.tiny_config(n_refs=3)
    full_cfg = tr.TrainConfig(steps=6, batch_size=2, lr=1e-3, seed=2, k_refs=3,
                              width="tiny", log_every=0)
    tr.train(toy_dataset, split, mcfg, full_cfg, tmp_path / "full")
    full_log = json.loads((tmp_path / "full" / "loss_log.json").read_text())

    head_cfg = tr.TrainConfig(steps=3, batch_size=2, lr=1e-3, seed=2, k_refs=3,
                              width="tiny", log_every=0)
    ckpt = tr.train(toy_dataset, split, mcfg, head_cfg, tmp_path / "head")
    tail_cfg = tr.TrainConfig(steps=3, batch_size=2, lr=1e-3, seed=2, k_refs=3,
                              width="tiny", log_every=0)
    tr.train(toy_dataset, split, mcfg, tail_cfg, tmp_path / "tail",
             resume_from=ckpt)
    tail_log = json.loads((tmp_path / "tail" / "loss_log.json").read_text())
    for ref, got in zip(full_log[3:], tail_log):
        assert got["step"] == ref["step"]
        assert got["loss"] == pytest.approx(ref["loss"], rel=1e-5)


def test_train_k_exceeding_candidates(toy_dataset, tmp_path):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    tcfg = tr.TrainConfig(steps=1, batch_size=1, k_refs=5, width="tiny")
    mcfg = tr.model_config_for(tcfg)
    # 5 candidates minus the target leaves 4 < K=5
    with pytest.raises(ConfigurationError):
        tr.train(toy_dataset, split, mcfg, tcfg, tmp_path / "bad")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def test_oracle_eval_zero_errors(toy_dataset, tmp_path):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    report = ev.evaluate(toy_dataset, split, "oracle", k=3, seed=0,
                         out_dir=tmp_path / "rep")
    agg = report.aggregates
    assert agg["mean_edt_err_s"] == 0.0
    assert agg["mean_c50_err_db"] == 0.0
    assert agg["mean_t60_err_pct"] in (0.0, None)
    assert agg["n_examples"] == len(split.test_examples(toy_dataset))
    # artifacts: json + csv + figures alongside
    assert (tmp_path / "rep" / "report.json").exists()
    assert (tmp_path / "rep" / "metrics.csv").exists()
    assert (tmp_path / "rep" / "figures" / "metric_histograms.png").exists()


def test_eval_csv_schema(toy_dataset, tmp_path):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    ev.evaluate(toy_dataset, split, "nearest", k=3, seed=0, out_dir=tmp_path / "rep")
    lines = (tmp_path / "rep" / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "example_id,room_id,method,K,edt_err_s,c50_err_db,t60_err_pct,t60_valid"
    assert len(lines) - 1 == len(split.test_examples(toy_dataset))


def test_eval_aggregates_match_rows(toy_dataset, tmp_path):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    report = ev.evaluate(toy_dataset, split, "linear", k=3, seed=0)
    rows = report.rows
    assert report.aggregates["mean_edt_err_s"] == pytest.approx(
        np.mean([r["edt_err_s"] for r in rows]))
    t60_rows = [r["t60_err_pct"] for r in rows if r["t60_err_pct"] is not None]
    if t60_rows:
        assert report.aggregates["mean_t60_err_pct"] == pytest.approx(np.mean(t60_rows))
    assert report.aggregates["t60_excluded"] == len(rows) - len(t60_rows)


def test_eval_model_method(toy_dataset, tiny_training, tmp_path):
    _, split, tcfg, mcfg, ckpt = tiny_training
    report = ev.evaluate(toy_dataset, split, "model", k=3, seed=0,
                         checkpoint=ckpt, max_examples=4)
    assert len(report.rows) == 4
    assert all(np.isfinite(r["edt_err_s"]) for r in report.rows)


def test_eval_empty_test_side_error(toy_dataset):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    empty = ds.SplitSpec(mode="unseen", train_rooms=split.train_rooms,
                         test_rooms=(), train_receivers={}, test_receivers={},
                         seed=1)
    with pytest.raises(ConfigurationError):
        ev.evaluate(toy_dataset, empty, "nearest", k=3, seed=0)


def test_eval_byte_identical_reruns(toy_dataset, tmp_path):
    split = ds.make_split(toy_dataset, "unseen", seed=1)
    for name in ("x", "y"):
        ev.evaluate(toy_dataset, split, "random-same", k=3, seed=7,
                    out_dir=tmp_path / name)
    assert (tmp_path / "x" / "report.json").read_bytes() == \
        (tmp_path / "y" / "report.json").read_bytes()
    assert (tmp_path / "x" / "metrics.csv").read_bytes() == \
        (tmp_path / "y" / "metrics.csv").read_bytes()


# ---------------------------------------------------------------------------
# Acoustic map
# ---------------------------------------------------------------------------

def test_acoustic_map_nearest_identity(toy_dataset, tmp_path):
    room_id = toy_dataset.room_ids[0]
    result = ev.acoustic_map(toy_dataset, room_id, "nearest", k=3, seed=0,
                             resolution=0.8, receiver_idx=0,
                             out_dir=tmp_path / "map")
    assert result["valid"].any()
    # invalid cells: never closer than 0.5 m to a wall or 1.0 m to the receiver
    room = toy_dataset.room(room_id)
    receiver = toy_dataset.placement(room_id).receivers[0]
    for ix, x in enumerate(result["xs"]):
        for iy, y in enumerate(result["ys"]):
            if result["valid"][ix, iy]:
                p = np.array([x, y, receiver[2]])
                assert np.min(room.surface_distance(p)) >= 0.5 - 1e-9
                assert np.linalg.norm(p - receiver) >= 1.0 - 1e-9
                assert np.isfinite(result["c50_pred"][ix, iy])
    csv_path = tmp_path / "map" / "acoustic_map.csv"
    assert csv_path.read_text().startswith("x,y,c50_pred,c50_gt,valid")
    figs = list((tmp_path / "map").glob("acoustic_map_*.png"))
    assert figs


def test_acoustic_map_deterministic(toy_dataset, tmp_path):
    room_id = toy_dataset.room_ids[0]
    kw = dict(resolution=1.0, receiver_idx=0)
    a = ev.acoustic_map(toy_dataset, room_id, "nearest", k=3, seed=5, **kw)
    b = ev.acoustic_map(toy_dataset, room_id, "nearest", k=3, seed=5, **kw)
    assert np.array_equal(a["valid"], b["valid"])
    assert np.allclose(a["c50_gt"], b["c50_gt"], equal_nan=True)
    assert np.allclose(a["c50_pred"], b["c50_pred"], equal_nan=True)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def run_cli(*args):
    from roomecho.cli import main
    import io
    from contextlib import redirect_stderr, redirect_stdout
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(args))
    return code, out.getvalue(), err.getvalue()


def test_cli_unknown_subcommand_exit_1():
    code, _, _ = run_cli("frobnicate")
    assert code == 1


def test_cli_unknown_flag_exit_1():
    code, _, err = run_cli("gen-data", "--out", "x", "--bogus")
    assert code == 1


def test_cli_runtime_error_exit_2(tmp_path):
    code, _, err = run_cli("split", "--data", str(tmp_path / "missing"),
                           "--mode", "seen", "--out", str(tmp_path / "s.json"))
    assert code == 2
    assert "error" in err


def test_cli_gen_split_eval_roundtrip(tmp_path):
    data_dir = tmp_path / "data"
    code, out, err = run_cli("--json", "gen-data", "--out", str(data_dir),
                             "--rooms", "3", "--sources", "4",
                             "--receivers", "2", "--seed", "3")
    assert code == 0, err
    assert (data_dir / "manifest.json").exists()
    events = [json.loads(line) for line in out.strip().split("\n")]
    assert any(e["event"] == "dataset_written" for e in events)

    split_path = tmp_path / "split.json"
    code, *_ = run_cli("split", "--data", str(data_dir), "--mode", "seen",
                       "--seed", "1", "--out", str(split_path))
    assert code == 0

    rep_dir = tmp_path / "rep"
    code, *_ = run_cli("eval", "--data", str(data_dir), "--split",
                       str(split_path), "--method", "nearest", "--k", "2",
                       "--out", str(rep_dir))
    assert code == 0
    report = json.loads((rep_dir / "report.json").read_text())
    assert report["method"] == "nearest"
    assert (rep_dir / "metrics.csv").exists()

    code, out, _ = run_cli("inspect", str(data_dir))
    assert code == 0
    assert json.loads(out)["kind"] == "dataset_manifest"


def test_cli_rooms_not_divisible_exit_1(tmp_path):
    code, _, err = run_cli("gen-data", "--out", str(tmp_path / "d"),
                           "--rooms", "4")
    assert code == 1


def test_cli_train_and_model_eval(tmp_path):
    data_dir = tmp_path / "data"
    code, *_ = run_cli("gen-data", "--out", str(data_dir), "--rooms", "3",
                       "--sources", "4", "--receivers", "2", "--seed", "3")
    assert code == 0
    split_path = tmp_path / "split.json"
    code, *_ = run_cli("split", "--data", str(data_dir), "--mode", "seen",
                       "--seed", "1", "--out", str(split_path))
    assert code == 0
    run_dir = tmp_path / "run"
    code, out, err = run_cli("train", "--data", str(data_dir), "--split",
                             str(split_path), "--k", "2", "--steps", "2",
                             "--batch", "2", "--width", "tiny",
                             "--out", str(run_dir))
    assert code == 0, err
    assert (run_dir / "checkpoint.f32").exists()
    rep_dir = tmp_path / "model_rep"
    code, out, err = run_cli("eval", "--data", str(data_dir), "--split",
                             str(split_path), "--method", "model", "--k", "2",
                             "--checkpoint", str(run_dir / "checkpoint"),
                             "--max-examples", "2", "--out", str(rep_dir))
    assert code == 0, err
    report = json.loads((rep_dir / "report.json").read_text())
    assert report["method"] == "model"
    assert len(report["rows"]) == 2


def test_cli_acoustic_map(tmp_path):
    data_dir = tmp_path / "data"
    run_cli("gen-data", "--out", str(data_dir), "--rooms", "3",
            "--sources", "4", "--receivers", "2", "--seed", "3")
    man = json.loads((data_dir / "manifest.json").read_text())
    room_id = man["rooms"][0]["id"]
    out_dir = tmp_path / "map"
    code, _, err = run_cli("acoustic-map", "--data", str(data_dir),
                           "--room", room_id, "--method", "nearest",
                           "--k", "2", "--resolution", "1.2",
                           "--out", str(out_dir))
    assert code == 0, err
    assert (out_dir / "acoustic_map.csv").exists()


def test_cli_config_file_defaults(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "gen_data": {"rooms": 3, "sources": 4, "receivers": 2, "seed": 3},
    }))
    data_dir = tmp_path / "data"
    code, *_ = run_cli("--config", str(cfg_path), "gen-data",
                       "--out", str(data_dir))
    assert code == 0
    man = json.loads((data_dir / "manifest.json").read_text())
    assert len(man["rooms"]) == 3
    assert man["generator_seed"] == 3


def test_cli_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "roomecho.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout
