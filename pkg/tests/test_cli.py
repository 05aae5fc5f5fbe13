import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from holocorr.cli import EXIT_CAP, EXIT_CONFIG, EXIT_OK, main, parse_config_text
from holocorr.correspondence import dumps_correspondence, squaring
from holocorr.finite import FiniteCorrespondence, dumps_instance
from holocorr.measures import load_cloud
from holocorr.render import decode_pgm


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_degrees(workdir, capsys):
    assert main(["degrees", "correspondence=builtin:semigroup", "output=deg.txt"]) == EXIT_OK
    assert (workdir / "deg.txt").read_text() == "d = 4\nd_f = 2\n"
    assert "d = 4" in capsys.readouterr().out
    manifest = json.loads((workdir / "deg.txt.manifest.json").read_text())
    assert manifest["config"]["action"] == "degrees"
    assert set(manifest) >= {"config", "version", "wall_time_seconds", "outputs", "warnings"}


def test_degrees_from_file(workdir):
    (workdir / "sq.corr").write_text(dumps_correspondence(squaring()))
    assert main(["degrees", "correspondence=sq.corr"]) == EXIT_OK
    assert (workdir / "holocorr_degrees.txt").read_text() == "d = 2\nd_f = 1\n"


def test_preimage(workdir):
    assert main(["preimage", "correspondence=builtin:squaring", "point=4", "n=2", "output=pre.txt"]) == EXIT_OK
    pts = [complex(*map(float, line.split())) for line in (workdir / "pre.txt").read_text().splitlines()]
    expected = np.sqrt(2) * np.array([1, -1, 1j, -1j])
    assert len(pts) == 4
    assert max(min(abs(p - q) for q in expected) for p in pts) < 1e-12


def test_cap_exceeded_exit(workdir, capsys):
    rc = main(["preimage", "correspondence=builtin:semigroup", "point=2", "n=6", "cap=100", "output=p.txt"])
    assert rc == EXIT_CAP
    assert "cap" in capsys.readouterr().err
    assert not (workdir / "p.txt").exists()


def test_zero_samples_is_config_error(workdir):
    rc = main(["measure", "correspondence=builtin:semigroup", "samples=0", "output=m.cloud"])
    assert rc == EXIT_CONFIG
    assert not (workdir / "m.cloud").exists()
    assert not (workdir / "m.cloud.manifest.json").exists()


def test_bad_function_spec(workdir, capsys):
    rc = main(["birkhoff", "correspondence=builtin:squaring", "phi=fourier:x:re", "output=b.json"])
    assert rc == EXIT_CONFIG
    assert "position 8" in capsys.readouterr().err


@pytest.mark.parametrize("args", [["nonsense"], ["degrees"], ["degrees", "noequals"], ["run"]])
def test_config_errors(workdir, args):
    assert main(args) == EXIT_CONFIG


def test_measure_rerun_is_byte_identical(workdir):
    args = ["correspondence=builtin:semigroup", "samples=300", "depth=10", "seed=5", "output=m.cloud"]
    assert main(["measure", *args]) == EXIT_OK
    first = (workdir / "m.cloud").read_bytes()
    manifest = workdir / "m.cloud.manifest.json"
    (workdir / "m.cloud").unlink()
    assert main(["run", str(manifest), "--manifest", str(workdir / "again.json")]) == EXIT_OK
    assert (workdir / "m.cloud").read_bytes() == first
    cloud = load_cloud(workdir / "m.cloud")
    assert len(cloud) == 300
    digest = json.loads(manifest.read_text())["outputs"]["m.cloud"]
    assert digest == hashlib.sha256(first).hexdigest()


def test_run_key_value_config(workdir):
    (workdir / "job.cfg").write_text("# degrees job\naction = degrees\ncorrespondence = builtin:squaring\noutput = out.txt\n")
    assert main(["run", "job.cfg"]) == EXIT_OK
    assert (workdir / "out.txt").read_text().startswith("d = 2")


def test_parse_config_text():
    assert parse_config_text("a = 1\n\n# c\nb=x # tail\n") == {"a": "1", "b": "x"}
    assert parse_config_text('{"config": {"n": 3}}') == {"n": "3"}


def test_finite_check_swap(workdir, capsys):
    (workdir / "swap.txt").write_text(dumps_instance(FiniteCorrespondence.swap()))
    assert main(["finite-check", "instance=swap.txt", "output=swap.json"]) == EXIT_OK
    out = json.loads((workdir / "swap.json").read_text())
    assert (out["ergodic"], out["weak_mixing"], out["mixing"]) == (True, False, False)
    assert out["main_theorem_consistent"] and out["hierarchy_consistent"]
    assert out["mu"] == [0.5, 0.5]
    assert "ergodic = true, weak_mixing = false, mixing = false" in capsys.readouterr().out


def test_finite_check_ambiguous_measure(workdir):
    (workdir / "id.txt").write_text(dumps_instance(FiniteCorrespondence.identity(2)))
    assert main(["finite-check", "instance=id.txt"]) == EXIT_CONFIG


def test_birkhoff_and_render(workdir):
    assert main(["birkhoff", "correspondence=builtin:squaring", "phi=const:3", "n=5", "start=0.5+0.5i",
                 "output=b.json"]) == EXIT_OK
    out = json.loads((workdir / "b.json").read_text())
    assert out["partial_averages"] == pytest.approx([3.0] * len(out["partial_averages"]))
    assert main(["measure", "correspondence=builtin:squaring", "samples=200", "depth=12", "output=c.cloud"]) == EXIT_OK
    assert main(["render", "cloud=c.cloud", "size=32", "output=c.pgm"]) == EXIT_OK
    assert decode_pgm((workdir / "c.pgm").read_bytes()).shape == (32, 32)


@pytest.mark.parametrize("cloud", ["circle", "circle-stratified"])
def test_correlate_small(workdir, cloud):
    rc = main(["correlate", "correspondence=builtin:squaring", f"cloud={cloud}", "samples=200",
               "phi=const:1", "psi=const:1", "horizon=3", "output=c.json"])
    assert rc == EXIT_OK
    out = json.loads((workdir / "c.json").read_text())
    assert out["series"] == pytest.approx([1.0] * 4)


def test_console_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "holocorr.cli", "degrees", "correspondence=builtin:squaring"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "d = 2" in proc.stdout
