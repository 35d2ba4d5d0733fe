import csv
import json
import os
import subprocess
import sys

import pytest

from qdbayes.cli import csv_text, fmt, main

SMALL = """dots = {dots}
[sim]
restarts = 2
[sweep]
t_start_ns = 0.5
t_end_ns = 30
points = {points}
[scan]
dots_list = [1, 2]
priors_mT = [[0.0, 4.0], [1000.0, 4.0]]
product_samples = 20
"""


def write_config(tmp_path, dots=2, points=8):
    p = tmp_path / "run.toml"
    p.write_text(SMALL.format(dots=dots, points=points))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_number_formatting():
    assert fmt(0.0) == "0"
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(7) == "7" and fmt(True) == "1" and fmt("x") == "x"
    assert csv_text(["a", "b"], [[1, 0.5]]) == "a,b\n1,0.5\n"


def test_bath_table(tmp_path):
    assert main(["bath-table", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bath-table.csv")
    assert rows[0] == ["K", "count", "P_state", "P_multiplet"]
    assert sum(float(r[3]) for r in rows[1:]) == pytest.approx(1, abs=1e-10)
    side = json.loads((tmp_path / "bath-table.json").read_text())
    assert side["config"]["sim"]["n_bath"] == 49 and len(side["content_hash"]) == 40


def test_channel_curves(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["channel-curves", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "channel-curves.csv")
    assert rows[0] == ["t_ns", "B_mT", "A", "re_E", "im_E", "abs_E"]
    assert len(rows) == 1 + 3 * 8
    assert (tmp_path / "channel-curves.png").stat().st_size > 0


def test_sweep_columns_and_determinism(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", str(cfg), "--out", str(a), "--threads", "1"]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(b), "--threads", "2"]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    rows = read_csv(a / "sweep.csv")
    assert rows[0] == ["t_ns", "ratio_opt", "ratio_ghz", "ratio_plus", "ratio_plus0", "ratio_00",
                       "lambda_1", "lambda_2", "lambda_3", "lambda_4", "p_1", "p_2", "p_3", "p_4", "regime"]
    assert len(rows) == 9
    assert (a / "sweep.png").exists() and (a / "sweep.json").exists()


def test_seed_override_changes_hash(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "x"), "--t-ns", "3"]) == 0
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "y"), "--t-ns", "3",
                 "--seed", "5"]) == 0
    hx = json.loads((tmp_path / "x" / "optimize.json").read_text())
    hy = json.loads((tmp_path / "y" / "optimize.json").read_text())
    assert hx["content_hash"] != hy["content_hash"] and hy["config"]["sim"]["seed"] == 5
    rows = read_csv(tmp_path / "x" / "optimize-state.csv")
    assert rows[0] == ["basis", "amp_re", "amp_im", "lambda_mT", "p"] and len(rows) == 5


def test_transitions_reuses_sweep(tmp_path):
    cfg = write_config(tmp_path, points=10)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert main(["transitions", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "transitions.csv")
    assert rows[0] == ["kind", "t_lo_ns", "t_hi_ns", "spectrum_jump_mT", "kink_score", "state_overlap_drop"]


def test_compare_n_and_prior_scan(tmp_path):
    cfg = write_config(tmp_path, points=6)
    assert main(["compare-n", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "compare-n.csv")
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert main(["prior-scan", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "prior-scan.csv")
    assert len(rows) == 1 + 2 * 2
    assert all(float(r[4]) >= float(r[5]) - 1e-9 for r in rows[1:])
    assert (tmp_path / "prior-scan.png").exists() and (tmp_path / "compare-n.png").exists()


def test_config_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("dots = 7\n")
    assert main(["bath-table", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "N out of supported range [1,5]" in capsys.readouterr().err
    assert main(["bath-table", "--dots", "0", "--out", str(tmp_path)]) == 2
    assert main(["bath-table", "--config", str(tmp_path / "missing.toml")]) == 2


@pytest.mark.skipif(os.geteuid() == 0, reason="root can write anywhere")
def test_unwritable_output(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    assert main(["bath-table", "--out", str(ro / "sub")]) == 1


def test_output_path_is_a_file(tmp_path, capsys):
    f = tmp_path / "file"
    f.write_text("")
    assert main(["bath-table", "--out", str(f)]) == 1
    assert "cannot create output directory" in capsys.readouterr().err


def test_invalid_command():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_console_entry_point_streams_progress_to_stderr(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qdbayes.cli", "bath-table", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout == "" and "wrote" in res.stderr
