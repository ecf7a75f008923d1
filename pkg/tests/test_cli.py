import csv
import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from refaudit import cli

FIXTURES = Path(__file__).parent / "fixtures"


def write_config(path, models=None, **over):
    cfg = {
        "models": models or [{"model_id": "mock/a", "transport": "mock:role_accommodation:0"},
                             {"model_id": "mock b", "transport": "mock:role_accommodation:1"}],
        "generation": {"seeds": [0, 1, 2], "per_seed_count": 120},
        "audit": {"classifiers": ["logreg"], "k": 60},
    }
    cfg.update(over)
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    cfg = write_config(root / "cfg.json")
    out = root / "out"
    assert cli.main(["all", "--config", str(cfg), "--out", str(out), "--always"]) == 0
    return cfg, out


def test_all_writes_every_stage(bundle):
    _, out = bundle
    for stage in cli.STAGES:
        manifest = json.loads((out / "manifests" / f"{stage}.json").read_text())
        assert manifest["stage"] == stage
        for rel in manifest["outputs"]:
            assert (out / rel).is_file(), rel
    assert (out / "corpus" / "mock_a.jsonl").is_file()
    assert (out / "models" / "mock_b" / "salience_patron_type.csv").is_file()
    rows = list(csv.DictReader((out / "verdicts.csv").open()))
    assert {(r["model"], r["dimension"]) for r in rows} == {(m, d) for m in ("mock/a", "mock b")
                                                           for d in ("sex", "race", "patron_type")}
    hashes = {json.loads(p.read_text())["config_hash"] for p in (out / "manifests").glob("*.json")}
    assert len(hashes) == 1


def test_index_links_stay_inside_the_bundle(bundle):
    _, out = bundle
    html = (out / "index.html").read_text(encoding="utf-8")
    links = re.findall(r'href="([^"]+)"', html)
    assert links
    for link in links:
        assert not link.startswith(("/", "http:", "https:", "file:")) and ".." not in link
        assert (out / link).is_file(), link
    assert html.count("<svg") == len(list((out / "charts").glob("*.svg")))


def test_stages_rerun_one_at_a_time(bundle, tmp_path):
    cfg, out = bundle
    copy = tmp_path / "stagewise"
    for stage in cli.STAGES:
        args = [stage, "--config", str(cfg), "--out", str(copy)]
        if stage == "explain":
            args.append("--always")
        assert cli.main(args) == 0, stage
    for name in ("verdicts.csv", "consensus_matrix.csv", "aggregation.csv", "index.html"):
        assert (copy / name).read_bytes() == (out / name).read_bytes(), name


def test_reruns_are_byte_identical(bundle, tmp_path):
    cfg, out = bundle
    again = tmp_path / "again"
    assert cli.main(["all", "--config", str(cfg), "--out", str(again), "--always"]) == 0
    a = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
    b = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    assert a == b
    for rel in a:
        assert (out / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_stage_out_of_order_is_an_input_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    assert cli.main(["audit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "run 'generate' first" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [
    {"modles": []},
    {"audit": {"classifiers": ["svm"]}},
    {"generation": {"temperature": 5}},
    {"consensus": {"dimension": "age"}},
])
def test_bad_config_exits_2(tmp_path, bad):
    cfg = write_config(tmp_path / "cfg.json", **bad)
    assert cli.main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_flag_and_missing_config_exit_2(tmp_path, capsys):
    assert cli.main(["audit", "--config", "x.json", "--bogus"]) == 2
    assert cli.main(["audit"]) == 2
    assert cli.main(["audit", "--config", str(tmp_path / "nope.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert cli.main(["audit", "--config", str(tmp_path / "broken.json")]) == 2
    capsys.readouterr()


def test_unreachable_endpoint_exits_3(tmp_path):
    models = [{"model_id": "down", "transport": "http",
               "generation": {"endpoint_url": "http://127.0.0.1:9/v1/chat/completions", "retries": 0,
                              "timeout": 2.0}}]
    cfg = write_config(tmp_path / "cfg.json", models=models,
                       generation={"seeds": [0, 1], "per_seed_count": 12, "concurrency": 4})
    out = tmp_path / "o"
    assert cli.main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["generate", "--config", str(cfg), "--out", str(out)]) == 3
    # the raw log still records every failed attempt
    assert len((out / "corpus" / "down.raw.jsonl").read_text().splitlines()) == 24


def test_consensus_with_one_model_is_skipped(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", models=[{"model_id": "solo", "transport": "mock:role_accommodation:0"}])
    out = tmp_path / "o"
    assert cli.main(["all", "--config", str(cfg), "--out", str(out), "--always"]) == 0
    manifest = json.loads((out / "manifests" / "consensus.json").read_text())
    assert manifest["status"] == "skipped"
    assert (out / "consensus_matrix.csv").read_text().splitlines()[1:] == []
    assert "no data" in (out / "charts" / "heatmap_patron_type.svg").read_text()


def test_radar_table_report(bundle, tmp_path):
    cfg, out = bundle
    copy = tmp_path / "radar"
    for stage in ("synthesize", "generate", "audit"):
        assert cli.main([stage, "--config", str(cfg), "--out", str(copy)]) == 0
    table = FIXTURES / "radar_coefficients.csv"
    assert cli.main(["report", "--config", str(cfg), "--out", str(copy), "--radar-csv", str(table)]) == 0
    rows = list(csv.DictReader((copy / "charts" / "radar_Dear.csv").open()))
    val = {(r["series"], r["axis"]): r["value"] for r in rows}
    assert val[("GPT-4o", "Graduate")] == "53.6"
    assert val[("GPT-4o", "Outside")] == "-35.9"
    assert val[("Claude-3.5", "Graduate")] == "NA"
    assert {"radar_Thank.svg", "radar_Dear.svg", "radar_Research.svg"} <= {p.name for p in (copy / "charts").iterdir()}


def test_read_radar_csv_parses_signs_and_gaps():
    t = cli.read_radar_csv(FIXTURES / "radar_coefficients.csv")
    assert t["Dear"]["GPT-4o"] == [53.6, 44.9, -28.7, 9.4, -35.9]
    assert t["Research"]["Llama-3.1"] == [1.7, 4.7, None, None, 2.6]
    assert len(t["Dear"]) == 5 and len(t["Thank"]) == 3 and len(t["Research"]) == 6


def test_module_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "refaudit", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("refaudit ")
