import copy
import json
import subprocess
import sys
from pathlib import Path

import pytest

from sabias.cli import main
from sabias.config import load_config, parse_config
from sabias.errors import ConfigInvalid

ROOT = Path(__file__).resolve().parents[1]


def small_logistic(**sa):
    raw = json.loads((ROOT / "fixtures" / "logistic3.json").read_text())
    raw["sa"].update({"K": 4000, "k0": 2000, "replicas": 8, "batch_count": 8})
    raw["sa"].update(sa)
    raw["coupling"].update({"K": 300, "replicas": 4})
    return raw


def small_linear():
    raw = json.loads((ROOT / "fixtures" / "linear2.json").read_text())
    raw["sa"].update({"K": 3000, "k0": 1000, "replicas": 8, "batch_count": 8})
    return raw


def write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_shipped_fixtures_parse():
    for name in ("logistic3.json", "linear2.json"):
        cfg = load_config(ROOT / "fixtures" / name)
        assert cfg.study == "all"
        assert len(cfg.digest) == 64


def test_run_happy_path(tmp_path, capsys):
    out = tmp_path / "res"
    rc = main(["run", "--config", str(write(tmp_path, small_logistic(k0=3000))), "--out", str(out), "--threads", "2"])
    assert rc == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["bias.csv", "bias.json", "clt.csv", "coupling.csv", "manifest.json", "moments.csv", "rr.csv"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 2024
    assert set(man["files"]) == set(files) - {"manifest.json"}
    assert man["backend"] in ("numba", "numpy")
    lines = (out / "bias.csv").read_text().splitlines()
    assert lines[0] == "component,coord,value"


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, small_linear())
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    for f in (tmp_path / "a").glob("*.csv"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SABIAS_SEED", "99")
    cfg = load_config(write(tmp_path, small_linear()))
    assert cfg.sa.seed == 99
    monkeypatch.setenv("SABIAS_SEED", "x")
    with pytest.raises(ConfigInvalid):
        load_config(write(tmp_path, small_linear()))


def test_missing_model(tmp_path, capsys):
    raw = small_logistic()
    del raw["model"]
    rc = main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "config: missing field model" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("mutate, message", [
    (lambda r: r.update(extra=1), "unknown field extra"),
    (lambda r: r["sa"].update(alhpa=0.1), "unknown field sa.alhpa"),
    (lambda r: r["sa"].pop("K"), "missing field sa.K"),
    (lambda r: r["sa"].update(k0=10**9), "sa.k0"),
    (lambda r: r["sa"].update(alpha_grid=[0.1, -1]), "sa.alpha_grid"),
    (lambda r: r.update(study="nope"), "field study"),
    (lambda r: r["model"].update(family="probit"), "model.family"),
    (lambda r: r["chain"].update(transition=[[1, 0, 0], [0, 1, 0], [0, 0, 1]]), "Reducible"),
    (lambda r: r["chain"].update(transition=[[0.5, 0.5], [0.5, 0.5]]), "chain.observations"),
    (lambda r: r["noise"].update(variant="laplace"), "noise.variant"),
])
def test_config_errors(mutate, message):
    raw = small_logistic()
    mutate(raw)
    with pytest.raises(ConfigInvalid, match=message.replace(".", r"\.")):
        parse_config(raw)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_linear_broadcast_payload():
    raw = small_linear()
    raw["model"]["A"] = [[-1.0]]
    raw["model"]["c"] = [0.5]
    cfg = parse_config(raw)
    assert cfg.chain.n_states == 2
    assert cfg.alpha_grid == [0.05, 0.1, 0.2]


def test_stepsize_warning(tmp_path, capsys):
    raw = small_logistic(alpha=0.3, alpha_grid=[0.3, 0.6, 1.2])
    raw["study"] = "moments"
    rc = main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path / "w")])
    assert rc == 0
    err = capsys.readouterr().err
    assert "WARN: stepsize constraint alpha*tau_alpha*L^2 <= mu violated" in err
    man = json.loads((tmp_path / "w" / "manifest.json").read_text())
    assert man["warnings"]
    assert sorted(p.name for p in (tmp_path / "w").iterdir()) == ["manifest.json", "moments.csv"]


def test_no_warning_for_safe_linear(tmp_path, capsys):
    raw = small_linear()
    raw["sa"]["alpha"] = 0.001
    raw["study"] = "moments"
    assert main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path / "s")]) == 0
    assert "stepsize constraint" not in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    raw = small_linear()
    raw["model"]["A"] = [[[1.0]], [[0.5]]]
    raw["study"] = "moments"
    rc = main(["run", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path / "r")])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_report(tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["run", "--config", str(write(tmp_path, small_logistic(k0=3000))), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = (out / "report.md").read_text()
    for section in ("## Leading bias", "## Tail averaging vs Richardson-Romberg", "## Coupling contraction",
                    "## CLT diagnostic"):
        assert section in text
    assert "| ratio RR/PR |" in text


def test_report_missing_artifacts(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 3
    assert "manifest.json" in capsys.readouterr().err


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "sabias.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "run" in r.stdout
