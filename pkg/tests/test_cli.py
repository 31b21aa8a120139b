import json
import subprocess
import sys
from pathlib import Path

import pytest

from memerobust.cli import SECTIONS, build_parser, main, read_config_file
from memerobust.dataset import load_splits

SUBCOMMANDS = ["make-fixture", "train", "perturb-text", "perturb-image", "attack", "eval", "grid", "ablate",
               "gen-aug", "report"]
FAST = ["--epochs", "5", "--uap-epochs", "1", "--trigger-iterations", "2"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["make-fixture", "--out", str(out), "--n-train", "80", "--n-val", "10", "--n-test", "40"]) == 0
    return next(out.glob("make-fixture-*/manifest.jsonl"))


@pytest.fixture(scope="module")
def checkpoint(manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck")
    assert main(["train", "--manifest", str(manifest), "--out", str(out), "--epochs", "5"]) == 0
    return next(out.glob("train-*/model.ckpt"))


def test_top_level_help():
    r = subprocess.run([sys.executable, "-m", "memerobust.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for c in SUBCOMMANDS:
        assert c in r.stdout


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_subcommand_help_documents_every_flag(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args([cmd, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text


@pytest.mark.parametrize("argv", [["frobnicate"], ["grid", "--no-such-flag"], [], ["eval", "--severity", "9"]])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_manifest_is_usage_error(tmp_path, capsys):
    code, _, err = run(["train", "--out", tmp_path], capsys)
    assert code == 1 and "--manifest" in err


def test_data_errors_exit_2(tmp_path, capsys):
    code, _, err = run(["train", "--out", tmp_path, "--manifest", tmp_path / "nope.jsonl"], capsys)
    assert code == 2 and "data error" in err
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(["eval", "--out", tmp_path, "--manifest", bad], capsys)[0] == 2
    assert run(["report", "--out", tmp_path, tmp_path / "missing.json"], capsys)[0] == 2


def test_remote_error_exits_3(manifest, tmp_path, capsys):
    code, _, err = run(["eval", "--remote", "--manifest", manifest, "--out", tmp_path,
                        "--endpoint-url", "http://127.0.0.1:9/predict", "--endpoint-retries", "0",
                        "--endpoint-timeout", "1"], capsys)
    assert code == 3 and "remote error" in err


def test_config_file_and_flag_precedence(tmp_path, manifest, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[run]\nseed = 7\n[train]\nepochs = 3\n[noise]\ntypo_rate = 0.0\n")
    assert read_config_file(cfg) == {"run_seed": 7, "epochs": 3, "typo_rate": 0.0}
    code, _, _ = run(["perturb-text", "--family", "typos", "--in", manifest, "--out", tmp_path,
                      "--config", cfg, "--seed", "8"], capsys)
    assert code == 0
    written = next(tmp_path.glob("perturb-text-*/run_config.ini")).read_text()
    assert "run_seed = 8" in written and "typo_rate = 0.0" in written
    assert set(s.strip("[]") for s in written.split() if s.startswith("[")) == set(SECTIONS)


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nnonsense = 1\n")
    assert run(["train", "--config", cfg], capsys)[0] == 1
    cfg.write_text("[train]\nepochs = many\n")
    assert run(["train", "--config", cfg], capsys)[0] == 1


def test_typos_rate_zero_copies_captions(tmp_path, manifest, capsys):
    code, out, _ = run(["perturb-text", "--family", "typos", "--rate", "0", "--in", manifest, "--out", tmp_path],
                       capsys)
    assert code == 0
    a, b = load_splits(manifest), load_splits(out.strip())
    for name in a:
        assert [s.caption for s in a[name]] == [s.caption for s in b[name]]


def test_perturb_text_trigger_tokens(tmp_path, manifest, capsys):
    code, out, _ = run(["perturb-text", "--family", "triggers", "--tokens", "owz azn", "--in", manifest,
                        "--out", tmp_path], capsys)
    assert code == 0
    for a, b in zip(load_splits(manifest)["test"], load_splits(out.strip())["test"]):
        assert b.caption == "owz azn " + a.caption if a.caption else b.caption == "owz azn"
    assert run(["perturb-text", "--family", "hotflip", "--in", manifest, "--out", tmp_path], capsys)[0] == 1


def test_perturb_image_corruption(tmp_path, manifest, capsys):
    code, out, _ = run(["perturb-image", "--family", "corruption", "--kind", "fog", "--in", manifest,
                        "--out", tmp_path], capsys)
    assert code == 0
    a, b = load_splits(manifest)["test"], load_splits(out.strip())["test"]
    assert [s.caption for s in a] == [s.caption for s in b]
    assert any((x.image != y.image).any() for x, y in zip(a, b))


def test_attack_uap_then_perturb(tmp_path, manifest, checkpoint, capsys):
    code, out, _ = run(["attack", "uap", "--manifest", manifest, "--checkpoint", checkpoint, "--out", tmp_path,
                        "--uap-epochs", "1"], capsys)
    assert code == 0 and "fooling_rate=" in out
    uap = out.split()[0]
    code, out, _ = run(["perturb-image", "--family", "uap", "--uap", uap, "--in", manifest, "--out", tmp_path],
                       capsys)
    assert code == 0


def test_attack_trigger_and_hotflip(tmp_path, manifest, checkpoint, capsys):
    code, _, _ = run(["attack", "trigger", "--manifest", manifest, "--checkpoint", checkpoint, "--out", tmp_path,
                      "--trigger-length", "2", "--trigger-iterations", "2"], capsys)
    assert code == 0
    rec = json.loads(next(tmp_path.glob("attack-*/trigger.json")).read_text())
    assert len(rec["tokens"]) == 2 and rec["target_label"] == 1
    code, out, _ = run(["attack", "hotflip", "--manifest", manifest, "--checkpoint", checkpoint,
                        "--out", tmp_path / "hf"], capsys)
    assert code == 0
    edits = Path(out.strip()).with_name("edits.jsonl").read_text().splitlines()
    assert len(edits) == 40


def test_eval_clean_and_cell(tmp_path, manifest, checkpoint, capsys):
    code, out, _ = run(["eval", "--manifest", manifest, "--checkpoint", checkpoint, "--out", tmp_path,
                        "--text-family", "typos", "--image-family", "corruption"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3 and lines[1].startswith("clean,") and lines[2].startswith("typos+corruption,")


def test_grid_deterministic_and_report_rerender(tmp_path, manifest, checkpoint, capsys):
    argv = ["grid", "--manifest", manifest, "--checkpoint", checkpoint, "--seed", "3", *FAST[2:]]
    outputs = []
    for name in ("a", "b"):
        assert run([*argv, "--out", tmp_path / name], capsys)[0] == 0
        d = next((tmp_path / name).glob("grid-*"))
        outputs.append({f: (d / f).read_bytes() for f in ("grid.csv", "grid.md", "grid.json", "run_config.ini")})
        assert (d / "grid.png").stat().st_size > 0
    a, b = outputs
    assert a["grid.csv"] == b["grid.csv"] and a["grid.md"] == b["grid.md"] and a["grid.json"] == b["grid.json"]
    code, out, _ = run(["report", str(next((tmp_path / "a").glob("grid-*/grid.json"))), "--format", "csv",
                        "--out", tmp_path / "r"], capsys)
    assert code == 0 and out == a["grid.csv"].decode()


def test_persisted_config_reexecutes(tmp_path, manifest, checkpoint, capsys):
    argv = ["eval", "--manifest", manifest, "--checkpoint", checkpoint, "--text-family", "typos", "--seed", "5"]
    assert run([*argv, "--out", tmp_path / "a"], capsys)[0] == 0
    d = next((tmp_path / "a").glob("eval-*"))
    cfg = d / "run_config.ini"
    assert run(["eval", "--config", cfg, "--text-family", "typos", "--out", tmp_path / "b"], capsys)[0] == 0
    again = next((tmp_path / "b").glob("eval-*"))
    assert (again / "metrics.csv").read_bytes() == (d / "metrics.csv").read_bytes()


def test_ablate_and_gen_aug(tmp_path, manifest, checkpoint, capsys):
    code, out, _ = run(["ablate", "--manifest", manifest, "--checkpoint", checkpoint, "--out", tmp_path,
                        "--label", "toy", *FAST[2:]], capsys)
    assert code == 0 and "toy (Text)" in out and "toy (Image)" in out
    code, out, _ = run(["gen-aug", "--manifest", manifest, "--n", "12", "--out", tmp_path], capsys)
    assert code == 0
    aug = load_splits(out.strip())
    assert list(aug) == ["aug"] and len(aug["aug"]) == 12
