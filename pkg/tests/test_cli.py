import json

import numpy as np
import pytest

from rogpl.cli import load_config, main
from rogpl.graph import load_dataset, save_dataset

from test_bench import multi_class_graph

CFG = dict(epochs=10, warmup_epochs=5, refresh_period=5, hidden_dim=8,
           latent_dim=8, k_nn=6, k_clusters=4, seed=0,
           ind_rate=0.1, ood_mode="near")


@pytest.fixture
def data_dir(tmp_path):
    g = multi_class_graph(n_per_class=40, n_classes=4, seed=1)
    d = tmp_path / "toy"
    save_dataset(g, str(d))
    return d


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CFG))
    return p


class TestConfig:
    def test_split_into_train_and_noise(self, config_file):
        cfg, noise = load_config(str(config_file))
        assert cfg.epochs == 10
        assert noise.ind_rate == 0.1
        assert noise.ood_mode == "near"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"epochs": 5, "bogus_knob": 1}))
        with pytest.raises(SystemExit, match="bogus_knob"):
            load_config(str(p))


class TestCommands:
    def test_train_eval_round(self, data_dir, config_file, tmp_path, capsys):
        model_path = tmp_path / "model.rogpl"
        rc = main(["train", "--data", str(data_dir), "--config", str(config_file),
                   "--seed", "1", "--out", str(model_path),
                   "--log", str(tmp_path / "log.jsonl")])
        assert rc == 0
        assert model_path.exists()
        out = capsys.readouterr().out
        assert "macro_f1" in out

        metrics_path = tmp_path / "metrics.csv"
        rc = main(["eval", "--model", str(model_path), "--data", str(data_dir),
                   "--out", str(metrics_path)])
        assert rc == 0
        lines = metrics_path.read_text().splitlines()
        assert lines[0].startswith("dataset,ood_mode")
        assert len(lines) == 2

    def test_eval_reproduces_train_metrics(self, data_dir, config_file,
                                           tmp_path, capsys):
        model_path = tmp_path / "model.rogpl"
        main(["train", "--data", str(data_dir), "--config", str(config_file),
              "--out", str(model_path)])
        train_out = capsys.readouterr().out
        main(["eval", "--model", str(model_path), "--data", str(data_dir),
              "--out", str(tmp_path / "m.csv")])
        eval_out = capsys.readouterr().out
        f1_train = train_out.split("macro_f1=")[1].split()[0]
        f1_eval = eval_out.split("macro_f1=")[1].split()[0]
        assert f1_train == f1_eval

    def test_ablate_flag(self, data_dir, config_file, tmp_path):
        model_path = tmp_path / "model.rogpl"
        rc = main(["train", "--data", str(data_dir), "--config", str(config_file),
                   "--ablate", "no-region", "--out", str(model_path)])
        assert rc == 0
        from rogpl.model_io import load_model
        assert load_model(str(model_path)).diagnostics["variant"] == "no-region"

    def test_sweep_rows(self, data_dir, config_file, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        rc = main(["sweep", "--axis", "ind", "--values", "0,0.1",
                   "--data", str(data_dir), "--config", str(config_file),
                   "--seeds", "2", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2 * 3  # header + 2 values x (2 seeds + median)

    def test_sweep_far_axis(self, data_dir, tmp_path):
        from rogpl.graph import save_dataset
        src = multi_class_graph(n_per_class=40, n_classes=3, seed=9)
        src_dir = tmp_path / "far_src"
        save_dataset(src, str(src_dir))
        cfg = dict(CFG, ood_mode="far", ood_rate=0.1, far_source=str(src_dir))
        cfg_path = tmp_path / "far.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "ood_sweep.csv"
        rc = main(["sweep", "--axis", "ood", "--values", "0,0.2",
                   "--data", str(data_dir), "--config", str(cfg_path),
                   "--seeds", "1", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2 * 2

    def test_prepare_roundtrip(self, tmp_path):
        raw = "/tmp/ghdata/gcn-master/gcn/data"
        import os
        if not os.path.exists(raw):
            pytest.skip("raw planetoid files not present")
        out = tmp_path / "cora"
        rc = main(["prepare", "--in", raw, "--name", "cora", "--out", str(out)])
        assert rc == 0
        g = load_dataset(str(out))
        assert g.n_nodes == 2708 and g.n_known_classes == 7

    def test_prepare_name_detection(self, tmp_path):
        raw = "/tmp/ghdata/gcn-master/gcn/data"
        import os
        if not os.path.exists(raw):
            pytest.skip("raw planetoid files not present")
        # directory holds cora+citeseer+pubmed: ambiguous without --name
        with pytest.raises(SystemExit, match="multiple datasets"):
            main(["prepare", "--in", raw, "--out", str(tmp_path / "x")])
