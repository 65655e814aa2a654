import subprocess
import sys
from pathlib import Path

import pytest

from dhtchain.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, main
from dhtchain.simnet import format_config, load_config, parse_config

SCENARIOS = Path(__file__).parent.parent / "scenarios"

SCENARIO = "n_nodes = 4\nblocks = 6\ntx_rate = 3.0\nseed = 5\n"


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text(SCENARIO)
    return path


def test_run_twice_byte_identical(scenario, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(scenario), "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", str(scenario), "--out", str(b)]) == EXIT_OK
    assert (a / "metrics.txt").read_bytes() == (b / "metrics.txt").read_bytes()
    assert (a / "trace.log").read_bytes() == (b / "trace.log").read_bytes()
    assert "summary=" in capsys.readouterr().out


def test_seed_and_blocks_override(scenario, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(scenario), "--seed", "9", "--blocks", "3",
                 "--out", str(out)]) == EXIT_OK
    text = (out / "metrics.txt").read_text()
    assert "seed=9\n" in text and "slots=3\n" in text


def test_verify_clean_and_tampered(scenario, tmp_path, capsys):
    out = tmp_path / "o"
    main(["run", "--config", str(scenario), "--out", str(out)])
    trace = out / "trace.log"
    capsys.readouterr()
    assert main(["verify", str(trace)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("ok blocks=6")

    lines = trace.read_text().splitlines()
    i = next(k for k, ln in enumerate(lines) if "\tblock\t" in ln and "index=3;" in ln)
    pos = len(lines[i]) - 10
    ch = lines[i][pos]
    lines[i] = lines[i][:pos] + format(int(ch, 16) ^ 1, "x") + lines[i][pos + 1:]
    bad = tmp_path / "bad.log"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(bad)]) == EXIT_MISMATCH
    assert "height=3" in capsys.readouterr().out


def test_verify_tampered_oracle_root(scenario, tmp_path, capsys):
    out = tmp_path / "o"
    main(["run", "--config", str(scenario), "--out", str(out)])
    text = (out / "trace.log").read_text()
    lines = text.splitlines()
    i = next(k for k, ln in enumerate(lines) if "\tblock\t" in ln and "index=2;" in ln)
    head, rest = lines[i].split("oracle=", 1)
    rest = ("0" if rest[0] != "0" else "1") + rest[1:]
    lines[i] = head + "oracle=" + rest
    bad = tmp_path / "bad.log"
    bad.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify", str(bad)]) == EXIT_MISMATCH
    assert "height=2" in capsys.readouterr().out


def test_size_model(capsys):
    assert main(["--size-model"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out == ["naive_proof_bytes=3200", "tx_bytes=2700", "block_overhead_bytes=225000",
                   "sync_bytes=4860000", "sync_seconds=19.44"]
    assert main(["size-model", "--elements-per-tx", "2"]) == EXIT_OK
    assert "tx_bytes=1200" in capsys.readouterr().out


def test_bench(scenario, capsys):
    assert main(["bench", "--config", str(scenario)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("quantity\t") and "tx_bytes\t" in out and "sync_seconds_estimate" in out


@pytest.mark.parametrize("argv", [
    ["run", "--config", "/nonexistent/scenario.cfg"],
    ["verify", "/nonexistent/trace.log"],
    ["size-model", "--d", "0"],
    ["run", "--blocks", "-1"],
    ["frobnicate"],
    [],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_CONFIG


def test_bad_config_file_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("blocks = 5\nforks = 2:40\n")
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dhtchain.cli", "--size-model"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "naive_proof_bytes=3200" in proc.stdout


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.cfg")), ids=lambda p: p.name)
def test_bundled_scenarios_parse(path):
    cfg = load_config(path)
    assert parse_config(format_config(cfg)) == cfg
