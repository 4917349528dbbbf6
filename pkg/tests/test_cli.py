import csv
import json

import numpy as np
import pytest

from snnlab import cli
from snnlab.data import DatasetManifest, gen_dataset, write_image
from snnlab.energy import EnergyCostTable, HardwareModel, energy_snn_nda
from snnlab.network import (LayerSpec, NetworkSpec, SparsityProfile, build_pair, default_spec,
                            layer_shapes, load_model, profiles_from_trace, save_model, snn_run)
from snnlab.training import evaluate_mse

from oracles import nda_population_events, price

HEADER = ["rho", "emac_cnn", "emac_snn", "cnn_ca_mer100", "snn_ca_mer100", "cnn_ca_mer50",
          "snn_ca_mer50", "cnn_ca_mer1", "snn_ca_mer1", "snn_nda"]


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    gen_dataset(2, 32, 32, [0.6, 0.9], 0.005, 0, root)
    return root / "manifest.json"


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_sweep_columns_and_rows(small_manifest, tmp_path, capsys):
    code, _ = run(["sweep", "--manifest", small_manifest, "--out", tmp_path], capsys)
    assert code == 0
    rows = list(csv.reader((tmp_path / "report.csv").open()))
    assert rows[0] == HEADER
    assert len(rows) == 3 and all(len(r) == 10 for r in rows)
    assert float(rows[1][0]) < float(rows[2][0])
    for name in ("report.json", "run-config.json", "report_raw.csv"):
        assert (tmp_path / name).exists()
    config = json.loads((tmp_path / "run-config.json").read_text())
    assert config["mer_list"] == [0.01, 0.02, 1.0] and config["seed"] == 0


def test_sweep_rerun_is_byte_identical(small_manifest, tmp_path):
    assert run(["sweep", "--manifest", small_manifest, "--out", tmp_path / "a"])[0] == 0
    assert run(["sweep", "--manifest", small_manifest, "--out", tmp_path / "b"])[0] == 0
    for name in ("report.csv", "report_raw.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_black_bucket_hits_overhead_floor(tmp_path):
    ds = tmp_path / "black"
    ds.mkdir()
    items = []
    for i in range(2):
        write_image(np.zeros((3, 8, 8)), ds / f"b{i}.ppm")
        items.append({"path": f"b{i}.ppm", "target": [0.5, 0.5, 0.1], "rho": 1.0, "rho_target": 1.0})
    DatasetManifest(items, 0).save(ds / "manifest.json")
    spec = NetworkSpec(layers=(LayerSpec.flatten(), LayerSpec.dense(192, 10), LayerSpec.dense(10, 6),
                               LayerSpec.dense(6, 3, activation="readout")),
                       t_window=4, input_shape=(3, 8, 8))
    spec.save(tmp_path / "spec.json")
    code = cli.main(["sweep", "--manifest", str(ds / "manifest.json"), "--spec", str(tmp_path / "spec.json"),
                     "--out", str(tmp_path / "out")])
    assert code == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    prof = report["profiles"][0]
    assert np.all(np.array(prof["s_out"])[:-1] == 1.0)
    costs = EnergyCostTable()
    floor = 0.0
    for shape in layer_shapes(spec):
        silent_in = [[[0] * shape.n_src] for _ in range(spec.t_window)]
        silent_out = [[0] for _ in range(spec.t_window)]
        floor += shape.neuron_count * price(nda_population_events(silent_in, silent_out, 1), costs)
    assert report["raw"]["rows"][0][HEADER.index("snn_nda")] == pytest.approx(floor, rel=1e-12)


def test_mean_then_evaluate_equals_evaluate_then_mean(small_manifest):
    snn, _ = build_pair(default_spec(), 0)
    images = DatasetManifest.load(small_manifest).load_dataset().images
    _, trace = snn_run(snn, images)
    profiles = profiles_from_trace(snn, trace)
    hw = HardwareModel.nda(EnergyCostTable())
    per_image = np.mean([energy_snn_nda(p, hw).total for p in profiles])
    assert energy_snn_nda(SparsityProfile.mean(profiles), hw).total == pytest.approx(per_image, rel=1e-12)


@pytest.mark.filterwarnings("ignore:overflow")
def test_sweep_errors(small_manifest, tmp_path, capsys):
    code, out = run(["sweep", "--manifest", tmp_path / "nope.json", "--out", tmp_path], capsys)
    assert code == 1 and "error" in out.err
    code, out = run(["sweep", "--manifest", small_manifest, "--mer", "2", "--out", tmp_path], capsys)
    assert code == 1
    bad = tmp_path / "costs.json"
    bad.write_text(json.dumps({**EnergyCostTable().to_json(), "e_add": float("inf")}))
    code, out = run(["sweep", "--manifest", small_manifest, "--costs", bad, "--out", tmp_path / "o"], capsys)
    assert code == 1
    huge = tmp_path / "huge.json"
    huge.write_text(json.dumps({**EnergyCostTable().to_json(), "e_add": 1e308}))
    code, out = run(["sweep", "--manifest", small_manifest, "--costs", huge, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "non-finite" in out.err
    assert not (tmp_path / "o" / "report.csv").exists()


def test_gen_data_single(tmp_path, capsys):
    code, _ = run(["gen-data", "--n", 1, "--rho", "0.8", "--out", tmp_path], capsys)
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["img_00000.ppm", "manifest.json"]


def test_train_zero_epochs(small_manifest, tmp_path, capsys):
    code, out = run(["train", "--manifest", small_manifest, "--epochs", 0, "--out", tmp_path], capsys)
    assert code == 1 and "epochs ≥ 1" in out.err


def test_train_and_eval_match_library(small_manifest, tmp_path, capsys):
    code, _ = run(["train", "--manifest", small_manifest, "--epochs", 1, "--model", "cnn",
                   "--out", tmp_path], capsys)
    assert code == 0
    side = json.loads((tmp_path / "cnn.ckpt.json").read_text())
    assert side["train_config"]["epochs"] == 1 and len(side["metrics"]["loss_history"]) == 1
    code, out = run(["eval", "--manifest", f"train={small_manifest}", "--cnn", tmp_path / "cnn.ckpt"], capsys)
    assert code == 0
    header, row = out.out.strip().splitlines()
    assert header.split("\t") == ["model", "train"]
    want = evaluate_mse(load_model(tmp_path / "cnn.ckpt"), DatasetManifest.load(small_manifest).load_dataset())
    assert row.split("\t")[0] == "CNN"
    assert float(row.split("\t")[1]) == pytest.approx(want, rel=1e-5)


def test_energy_command(small_manifest, tmp_path, capsys):
    snn, cnn = build_pair(default_spec(), 3)
    save_model(snn, tmp_path / "snn.ckpt")
    save_model(cnn, tmp_path / "cnn.ckpt")
    code, _ = run(["energy", "--manifest", small_manifest, "--snn", tmp_path / "snn.ckpt",
                   "--cnn", tmp_path / "cnn.ckpt", "--out", tmp_path], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "energy.json").read_text())
    assert set(doc["ca"]) == {"0.01", "0.02", "1"}
    assert len(doc["snn_nda"]) == 5


def test_mismatched_checkpoint_kind(small_manifest, tmp_path, capsys):
    snn, _ = build_pair(default_spec(), 0)
    save_model(snn, tmp_path / "snn.ckpt")
    code, out = run(["sweep", "--manifest", small_manifest, "--cnn", tmp_path / "snn.ckpt",
                     "--out", tmp_path], capsys)
    assert code == 1 and "cnn" in out.err
