import json
import subprocess
import sys

import pytest

from latphish import cli
from latphish.forest import load_model


def ctx_flags(paths):
    return ["--corpus", paths["corpus.jsonl"], "--orgs", paths["orgs.jsonl"], "--ranking", paths["ranking.csv"],
            "--keywords", paths["keywords.txt"], "--shortlinks", paths["shortlinks.tsv"]]


def test_missing_required_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--orgs", "o.jsonl", "--ranking", "r.csv", "--train-window", "2018-04/2018-05",
                  "--test-window", "2018-05/2018-06"])
    assert exc.value.code == 2
    assert "--corpus" in capsys.readouterr().err


def test_metrics_reference_table(capsys):
    assert cli.main(["metrics"]) == 0
    out = capsys.readouterr().out
    for cell in ("88.6%", "87.3%", "31.3%", "23.3%", "0.00053%", "0.00036%"):
        assert cell in out
    assert "Missed Attacks (FN)" in out


def test_metrics_from_counts_file(tmp_path, capsys):
    counts = {"w": {"detected_known": 1, "detected_new": 1, "missed": 2, "false_positives": 2, "total_emails": 100}}
    (tmp_path / "c.json").write_text(json.dumps(counts))
    assert cli.main(["metrics", "--counts", str(tmp_path / "c.json")]) == 0
    assert "50.0%" in capsys.readouterr().out


def test_data_error_exits_1(tmp_path, capsys):
    (tmp_path / "orgs.jsonl").write_text('{"org_id": "a", "verified_domains": ["a.com"]}\n')
    (tmp_path / "bad.jsonl").write_text('{"id": "x"}\n')
    assert cli.main(["validate", "--corpus", str(tmp_path / "bad.jsonl"), "--orgs", str(tmp_path / "orgs.jsonl")]) == 1
    assert "1 rejected" in capsys.readouterr().out
    assert cli.main(["metrics", "--counts", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_gen_writes_run_manifest(tmp_path, capsys):
    out = tmp_path / "g"
    args = ["gen", "--out", str(out), "--orgs", "6", "--mailboxes", "300", "--months", "2", "--campaigns", "6",
            "--seed", "5"]
    assert cli.main(args) == 0
    rec = json.loads((out / "corpus.jsonl.run.json").read_text())
    assert rec["command"] == "gen" and rec["seed"] == 5 and str(out / "corpus.jsonl") in rec["outputs"]
    assert len(rec["config_hash"]) == 64 and rec["parameters"]["orgs"] == 6
    assert cli.main(["validate", "--corpus", str(out / "corpus.jsonl"), "--orgs", str(out / "orgs.jsonl")]) == 0
    gen_cfg = json.loads((out / "gen_config.json").read_text())
    assert (gen_cfg["seed"], gen_cfg["n_orgs"], gen_cfg["months"]) == (5, 6, 2)


def test_train_detect_mine_characterize(synthetic, tmp_path, capsys):
    paths = synthetic["paths"]
    model = tmp_path / "m.json"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_trees": 8, "max_depth": 6}))
    assert cli.main(["train", *ctx_flags(paths), "--window", "2018-04/2018-05", "--config", str(cfg),
                     "--out-model", str(model), "--threads", "2"]) == 0
    assert len(load_model(model).trees) == 8
    manifest = json.loads((tmp_path / "m.json.run.json").read_text())
    assert paths["corpus.jsonl"] in manifest["inputs"]

    tpl = tmp_path / "t.jsonl"
    assert cli.main(["mine-templates", *ctx_flags(paths), "--month", "2018-04", "--out-templates", str(tpl)]) == 0

    alerts = tmp_path / "a.jsonl"
    assert cli.main(["detect", *ctx_flags(paths), "--model", str(model), "--window", "2018-05/2018-06",
                     "--templates", str(tpl), "--out-alerts", str(alerts)]) == 0
    assert alerts.read_text().strip()

    report = tmp_path / "c.json"
    assert cli.main(["characterize", "--corpus", paths["corpus.jsonl"], "--orgs", paths["orgs.jsonl"],
                     "--alerts", str(alerts), "--out-report", str(report)]) == 0
    rec = json.loads(report.read_text())
    assert rec["n_incidents"] > 0 and sum(rec["strategies"].values()) == rec["n_atos"]


def test_bad_window_is_data_error(synthetic, capsys):
    assert cli.main(["eval", *ctx_flags(synthetic["paths"]), "--train-window", "2018-05/2018-06",
                     "--test-window", "2018-04/2018-05"]) == 1
    assert "train window" in capsys.readouterr().err


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "latphish", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("latphish ")
