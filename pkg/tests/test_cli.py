import json

import pytest

from mmiofuzz.cli import EXIT_CAMPAIGN, EXIT_CONFIG, EXIT_OK, main
from mmiofuzz.config import (
    CampaignConfig, ConfigError, dump_config, load_config, parse_bool, parse_config, parse_int,
)
from mmiofuzz.firmware import golden, source
from mmiofuzz.mmio import encode_playback


# -- config -----------------------------------------------------------------

def test_parse_values():
    assert parse_bool("On") and not parse_bool("no")
    assert parse_int("0x1_000") == 4096
    with pytest.raises(ConfigError):
        parse_bool("maybe")
    with pytest.raises(ConfigError):
        parse_int("ten")


def test_config_round_trip():
    cfg = parse_config("firmware = corpus:i2c_init\npip = off  # raw reads\nfec = no\n"
                       "exec_budget = 50_000\nsnapshot_pcs = post_init, 0x1a0\n"
                       "passthrough = 0x40000010, 0x40000020\ndisable_cond4 = yes\n")
    assert cfg.pip is False and cfg.fec is False and cfg.disable_cond4
    assert cfg.snapshot_pcs == ["post_init", "0x1a0"]
    assert cfg.passthrough == [0x40000010, 0x40000020]
    again = parse_config(dump_config(cfg))
    assert again == cfg


@pytest.mark.parametrize("text, fragment", [
    ("pip = on\n", "firmware is required"),
    ("firmware = x\nbogus = 1\n", "unknown key"),
    ("firmware = x\nfirmware = y\n", "twice"),
    ("firmware = x\nexec_budget = lots\n", "line 2"),
    ("firmware = x\nmap_size = 1000\n", "power of two"),
    ("firmware = x\nclock = sundial\n", "clock"),
    ("firmware x\n", "key = value"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert fragment in str(exc.value)


def test_output_dir_resolution(tmp_path, monkeypatch):
    cfg = CampaignConfig(firmware="corpus:i2c_init", output_dir="out", base_dir=str(tmp_path))
    monkeypatch.delenv("MMIOFUZZ_OUT", raising=False)
    assert cfg.resolved_output_dir() == tmp_path / "out"
    monkeypatch.setenv("MMIOFUZZ_OUT", str(tmp_path / "env"))
    assert cfg.resolved_output_dir() == tmp_path / "env"


# -- commands -----------------------------------------------------------------

def test_assemble_writes_golden_image(tmp_path, capsys):
    src = tmp_path / "i2c_init.s"
    src.write_text(source("i2c_init"))
    assert main(["assemble", str(src), "-o", str(tmp_path / "fw.bin"), "--symbols"]) == EXIT_OK
    assert (tmp_path / "fw.bin").read_bytes() == golden("i2c_init")
    assert "post_init" in capsys.readouterr().out


def test_assemble_error_is_config_error(tmp_path):
    src = tmp_path / "bad.s"
    src.write_text("_start:\n FROB\n")
    assert main(["assemble", str(src)]) == EXIT_CONFIG


def test_run_reports_crash_with_symbol(tmp_path, capsys):
    inp = tmp_path / "in.bin"
    inp.write_bytes(encode_playback([(0x40001000, 4, 1)]))
    assert main(["run", "corpus:shared_fault", str(inp), "--trace"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "result: Crash(Unmapped)" in out
    assert "(poke)" in out and "crash key: Unmapped" in out
    assert "R[0x40001000/4]=0x1" in out


def test_run_flags_change_outcome(tmp_path, capsys):
    inp = tmp_path / "in.bin"
    inp.write_bytes(b"")
    assert main(["run", "corpus:term_selfjump", str(inp)]) == EXIT_OK
    assert "SelfJumpExit" in capsys.readouterr().out
    assert main(["run", "corpus:term_selfjump", str(inp), "--disable-cond4",
                 "--instr-budget", "1000"]) == EXIT_OK
    assert "BudgetExceeded" in capsys.readouterr().out


def test_run_missing_input_is_config_error(tmp_path):
    assert main(["run", "corpus:term_selfjump", str(tmp_path / "nope")]) == EXIT_CONFIG
    assert main(["run", "corpus:nonexistent", str(tmp_path / "nope")]) == EXIT_CONFIG


def write_cfg(tmp_path, extra=""):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("firmware = corpus:overflow_bug\nexec_budget = 400\nseed = 3\n"
                   "stats_interval = 100\nseed_len = 64\nmax_len = 256\n" + extra)
    return cfg


def test_fuzz_and_stats(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("MMIOFUZZ_OUT", raising=False)
    cfg = write_cfg(tmp_path)
    assert main(["fuzz", str(cfg), "--out", str(tmp_path / "camp")]) == EXIT_OK
    camp = tmp_path / "camp"
    for name in ("stats.csv", "summary.json", "coverage.txt"):
        assert (camp / name).is_file()
    summary = json.loads((camp / "summary.json").read_text())
    assert summary["execs"] == 400
    assert len(list((camp / "queue").iterdir())) == summary["queue_len"]
    lines = (camp / "stats.csv").read_text().splitlines()
    assert lines[0] == "unix_time,execs,blocks_covered,edges_covered,queue_len,crashes_unique"
    assert len(lines) == 1 + 5
    capsys.readouterr()
    assert main(["stats", str(camp)]) == EXIT_OK
    assert "execs: 400" in capsys.readouterr().out


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MMIOFUZZ_OUT", str(tmp_path / "envout"))
    assert main(["fuzz", str(write_cfg(tmp_path))]) == EXIT_OK
    assert (tmp_path / "envout" / "stats.csv").is_file()


def test_campaign_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert main(["fuzz", str(write_cfg(tmp_path)), "--out", str(blocker)]) == EXIT_CAMPAIGN


def test_bad_config_exit_code(tmp_path):
    assert main(["fuzz", str(write_cfg(tmp_path, "pip = sometimes\n"))]) == EXIT_CONFIG
    assert main(["fuzz", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["stats", str(tmp_path)]) == EXIT_CONFIG


def test_ablate_needs_odd_trials(tmp_path):
    assert main(["ablate", str(write_cfg(tmp_path)), "--trials", "4"]) == EXIT_CONFIG


def test_ablate_small(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["ablate", str(cfg), "--trials", "3", "--exec-budget", "150", "--quiet",
                 "--out", str(tmp_path / "abl")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "+PIP+FEC" in out and "queue reduction" in out and "Mann-Whitney" in out
    report = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    assert [a["arm"] for a in report["arms"]] == ["Baseline", "+PIP", "+PIP+FEC"]
    assert all(len(a["trials"]) == 3 for a in report["arms"])


def test_load_config_relative_firmware(tmp_path):
    (tmp_path / "fw.s").write_text(source("term_selfjump"))
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text("firmware = fw.s\nexec_budget = 10\n")
    cfg = load_config(cfg_path)
    assert cfg.base_dir == str(tmp_path)
    assert main(["fuzz", str(cfg_path), "--out", str(tmp_path / "o")]) == EXIT_OK
