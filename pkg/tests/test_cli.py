import json
import subprocess
import sys

import numpy as np
import pytest

from conformal_infill.cli import main
from conformal_infill.export import read_pgm
from conformal_infill.pipeline import HEADLINE_KEYS, STAGE_CODES

TINY = {
    "schema_version": 1, "name": "tiny",
    "domain": {"L": 2.0, "H": 1.0}, "mesh": {"nx": 20, "ny": 10},
    "epsilon": 0.1, "cell": {"type": "x"}, "cell_resolution": 32,
    "boundary_nodes": 12, "lambda_bounds": [0.5, 2.0],
    "load_case": "cantilever-right-patch",
    "masks": [{"type": "box", "box": [1.9, 0.3, 2.0, 0.7]}],
    "optimizer": {"max_iters": 2},
    "fine": {"resolution": [120, 60], "supersample": 2},
}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(json.dumps(TINY))
    return p


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "timings.json"}


def test_unknown_subcommand_prints_usage():
    r = subprocess.run([sys.executable, "-m", "conformal_infill.cli", "frobnicate"],
                       capture_output=True, text=True)
    assert r.returncode != 0 and "usage" in r.stderr


def test_homogenize_csv_has_square_symmetry(cfg, tmp_path):
    out = tmp_path / "h"
    assert main(["homogenize", "--config", str(cfg), "--out", str(out)]) == 0
    C = np.loadtxt(out / "C_hat.csv", delimiter=",", ndmin=2)
    C = C[-3:] if C.shape[0] > 3 else C
    assert C.shape == (3, 3) and np.allclose(C, C.T, atol=1e-12)
    assert C[0, 0] == pytest.approx(C[1, 1], rel=1e-10)
    assert abs(C[0, 2]) < 1e-10 and abs(C[1, 2]) < 1e-10
    assert (out / "cell.pgm").exists() and (out / "cell.png").exists()


def test_fields_stage(cfg, tmp_path):
    out = tmp_path / "f"
    assert main(["fields", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["stages"]["fields"]["lnlambda_range"] == [0.0, 0.0]
    img = read_pgm(out / "theta.pgm")
    assert img.shape == (11, 21)


def test_all_is_reproducible_and_report_complete(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["all", "--config", str(cfg), "--out", str(d)]) == 0
    fa, fb = files(a), files(b)
    assert fa.keys() == fb.keys()
    for name in fa:
        assert fa[name] == fb[name], name
    for name in ("history.csv", "design.json", "structure.pgm", "structure.png", "history.png",
                 "lnlambda.csv", "theta.pgm", "report.json"):
        assert name in fa
    rep = json.loads(fa["report.json"])
    assert len(rep["config_hash"]) == 64 and rep["version"].startswith("0.1.0")
    for k in HEADLINE_KEYS:
        assert isinstance(rep["headline"][k], float), k
    v = rep["stages"]["validate"]
    assert v["supersample"] == 2 and v["mesh_resolution"] == [120, 60]
    assert read_pgm(a / "structure.pgm").shape == (120, 240)
    t = json.loads((a / "timings.json").read_text())
    assert set(t) == {"optimize", "dehom", "validate"}


def test_resume_continues_history(cfg, tmp_path):
    out = tmp_path / "r"
    assert main(["optimize", "--config", str(cfg), "--out", str(out), "--max-iters", "1"]) == 0
    assert main(["optimize", "--config", str(cfg), "--out", str(out), "--max-iters", "2",
                 "--resume"]) == 0
    rows = (out / "history.csv").read_text().splitlines()[1:]
    assert [int(r.split(",")[0]) for r in rows] == [0, 1, 2]


def test_exit_codes(cfg, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(json.dumps(dict(TINY, epsilon=-1)))
    assert main(["fields", "--config", str(bad)]) == STAGE_CODES["config"]
    assert "epsilon" in capsys.readouterr().err
    assert main(["fields", "--config", str(tmp_path / "missing.cfg")]) == STAGE_CODES["config"]
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path / "v")]) == STAGE_CODES["validate"]
    assert "[validate]" in capsys.readouterr().err
    broken = dict(TINY, design={"values": [[0.0] * 5]})
    bp = tmp_path / "broken.cfg"
    bp.write_text(json.dumps(broken))
    assert main(["fields", "--config", str(bp), "--out", str(tmp_path / "x")]) == STAGE_CODES["fields"]
    huge = dict(TINY, fine={"resolution": [4000, 2000], "max_pixels": 1000})
    hp = tmp_path / "huge.cfg"
    hp.write_text(json.dumps(huge))
    assert main(["dehom", "--config", str(hp), "--out", str(tmp_path / "y")]) == STAGE_CODES["dehom"]


def test_bad_resolution_argument(cfg):
    with pytest.raises(SystemExit):
        main(["dehom", "--config", str(cfg), "--fine-res", "12by4"])
