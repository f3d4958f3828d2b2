import json

import numpy as np
import pytest

from cablelab.cli import main
from cablelab.config import ConfigError, parse_config

BASE = """\
model.family = two_state_sigmoid
numerics.T = 0.1
experiment.epsilon = 0.1, 0.05, 0.02
experiment.N = 4
experiment.R = 3
experiment.seed = 11
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_minimal_config(tmp_path):
    cfg = parse_config(write(tmp_path, BASE))
    assert cfg.pairs == ((0.1, 4), (0.05, 4), (0.02, 4))
    assert cfg.target == "averaged" and cfg.y0 == "sampled"


def test_section_headers_equivalent(tmp_path):
    text = "[model]\nfamily = two_state_sigmoid\n[experiment]\nepsilon = 0.1\nN = 4  # comment\n"
    cfg = parse_config(write(tmp_path, text))
    assert cfg.pairs == ((0.1, 4),)


@pytest.mark.parametrize("text,kind,key,fragment", [
    (BASE.replace("0.1, 0.05", "1.5, 0.05"), "validation", "experiment.epsilon", "epsilon must be in (0,1]"),
    (BASE + "experiment.epsilonn = 0.1\n", "validation", "experiment.epsilonn", "unknown key"),
    (BASE + "experiment.R = 4\n", "parse", "experiment.R", "duplicate"),
    (BASE.replace("R = 3", "R = three"), "parse", "experiment.R", "integer"),
    (BASE + "model.rates.bogus = 1\n", "validation", "model.rates.bogus", "no parameter"),
    (BASE + "numerics.M = 10\n", "validation", "numerics.M", "resolve"),
])
def test_config_errors(tmp_path, text, kind, key, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(write(tmp_path, text))
    assert (info.value.kind, info.value.key) == (kind, key)
    assert fragment in info.value.message


def test_exit_codes_are_distinct(tmp_path, capsys):
    missing = run(capsys, "validate", "--config", str(tmp_path / "nope.cfg"))
    bad_parse = run(capsys, "validate", "--config", write(tmp_path, "garbage line\n", "a.cfg"))
    invalid = run(capsys, "validate", "--config", write(tmp_path, BASE.replace("0.1,", "1.5,"), "b.cfg"))
    assert [missing[0], bad_parse[0], invalid[0]] == [3, 4, 5]
    msg = json.loads(invalid[2].strip())
    assert msg["error"] == "validation" and msg["key"] == "experiment.epsilon"
    with pytest.raises(SystemExit) as info:
        main(["sweep"])
    assert info.value.code == 2


def test_psi_table(capsys):
    code, out, _ = run(capsys, "psi-table", "--max", "10", "--points", "100")
    rows = out.strip().splitlines()
    assert code == 0 and rows[0] == "x,psi" and len(rows) == 101
    x, v = map(float, rows[1].split(","))
    assert (x, v) == (0.0, 1.0)
    vals = np.array([float(r.split(",")[1]) for r in rows[1:]])
    assert np.all(np.diff(vals) < 0)


def test_simulate_is_reproducible(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "simulate", "--config", cfg, "--out", str(a))[0] == 0
    assert run(capsys, "simulate", "--config", cfg, "--out", str(b))[0] == 0
    ta, tb = (a / "trajectory.csv").read_bytes(), (b / "trajectory.csv").read_bytes()
    assert ta == tb
    header = ta.decode().splitlines()[0].split(",")
    assert header == ["t", "site_event", "from", "to"] + [f"x_{j}" for j in range(1, 201)]
    assert run(capsys, "simulate", "--config", cfg, "--out", str(b), "--seed", "12")[0] == 0
    assert (b / "trajectory.csv").read_bytes() != ta


def test_average_outputs(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    code, out, _ = run(capsys, "average", "--config", cfg, "--out", str(tmp_path))
    assert code == 0 and (tmp_path / "averaged_N4.csv").exists()
    limit = write(tmp_path, BASE + "experiment.target = limit\n", "limit.cfg")
    assert run(capsys, "average", "--config", limit, "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "limit_M200.csv").exists()


def test_sweep_schema(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    code, _, _ = run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path), "--jobs", "1", "--plot")
    assert code == 0
    errors = (tmp_path / "errors.csv").read_text().splitlines()
    assert errors[0] == "eps,N,rep,sup_err2" and len(errors) == 1 + 9
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "eps,N,q10,q50,q90" and len(summary) == 4
    for row in summary[1:]:
        q = list(map(float, row.split(",")[2:]))
        assert q[0] <= q[1] <= q[2]
    tail = (tmp_path / "tail.csv").read_text().splitlines()
    assert tail[0] == "eps,N,delta,freq,ci_half"
    assert (tmp_path / "plot.svg").read_text().lstrip().startswith("<?xml")


def test_validate_passes(tmp_path, capsys):
    code, out, _ = run(capsys, "validate", "--config", write(tmp_path, BASE))
    lines = out.strip().splitlines()
    assert code == 0 and lines and all(line.startswith("PASS") for line in lines)


def test_bad_flags(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    assert run(capsys, "sweep", "--config", cfg, "--jobs", "0")[0] == 5
    assert run(capsys, "simulate", "--config", cfg, "--stride", "0")[0] == 5
