import json
import os

import numpy as np
import pytest

from spdegrf import penalized_loglik
from spdegrf.cli import load_fit, load_stations, main
from spdegrf.errors import DataFormatError
from spdegrf.model import Dataset

CFG = """\
# small run
domain = -130, -60, 20, 50
n_x = 14
n_y = 8
basis_k = 2
basis_l = 2
log_tau = 4, 4, 4, 4
stations = simulated_stations.csv
sim_params = -1.75, -0.272, 0.477, -0.313, 4.266
sim_n_stations = 80
sim_years = 2
reference_points = -100 35
cv_candidates = 2,2,2,2; 6,6,6,6
cv_folds = 2
max_iter = 80
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    (d / "run.cfg").write_text(CFG)
    assert main(["simulate", "--config", str(d / "run.cfg")]) == 0
    return d


def _cfg(d):
    return str(d / "run.cfg")


def test_simulate_writes_stations(workdir):
    recs = load_stations(str(workdir / "simulated_stations.csv"))
    assert len(recs) == 160
    assert {r.year for r in recs} == {2000, 2001}


def test_fit_roundtrip_and_determinism(workdir, tmp_path):
    assert main(["fit", "--config", _cfg(workdir), "--stationary"]) == 0
    first = (workdir / "fit.json").read_bytes()
    assert main(["fit", "--config", _cfg(workdir), "--stationary", "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "fit.json").read_bytes() == first
    d, spec, params = load_fit(str(workdir / "fit.json"))
    assert spec.stationary and len(d["theta"]) == 5 and len(d["std_errors"]) == 5
    recs = load_stations(str(workdir / "simulated_stations.csv"))
    loc = np.array([[r.lon, r.lat] for r in recs])
    ds = Dataset(loc, [r.value for r in recs], replicate=[r.year - 2000 for r in recs])
    assert penalized_loglik(spec, params, ds) == pytest.approx(d["loglik"], rel=1e-12)
    assert "fit_seconds" in json.loads((workdir / "timing.json").read_text())


def test_predict_outputs(workdir, tmp_path):
    assert main(["predict", "--config", _cfg(workdir), "--stationary", "--output-dir", str(tmp_path)]) == 0
    pred = np.genfromtxt(tmp_path / "prediction.csv", delimiter=",", names=True)
    assert len(pred) == 14 * 8
    assert np.all(pred["sd_obs"] >= pred["sd_latent"])
    cs = np.genfromtxt(tmp_path / "covsummary.csv", delimiter=",", names=True)
    assert cs.dtype.names == ("lon", "lat", "marginal_sd", "corr_1")
    assert np.isclose(cs["corr_1"].max(), 1.0)


def test_score_and_bad_holdout(workdir, tmp_path, capsys):
    assert main(["score", "--config", _cfg(workdir), "--stationary", "--output-dir", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "scores.json").read_text())
    assert s["n_test"] == 32 and s["crps"] > 0 and np.isfinite(s["log_score"])
    assert main(["score", "--config", _cfg(workdir), "--holdout", "0", "--output-dir", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_variogram_split(workdir, tmp_path):
    assert main(["variogram", "--config", _cfg(workdir), "--region-split", "-95", "--output-dir", str(tmp_path)]) == 0
    for side in ("west", "east"):
        v = np.genfromtxt(tmp_path / f"variogram_{side}.csv", delimiter=",", names=True)
        assert len(v) == 30 and v["count"].sum() > 0


def test_detrend(workdir, tmp_path):
    assert main(["detrend", "--config", _cfg(workdir), "--output-dir", str(tmp_path)]) == 0
    assert len(load_stations(str(tmp_path / "residual_stations.csv"))) == 160
    m = np.genfromtxt(tmp_path / "mean_field.csv", delimiter=",", names=True)
    assert len(m) == 14 * 8


@pytest.mark.slow
def test_cv(workdir, tmp_path):
    assert main(["cv", "--config", _cfg(workdir), "--output-dir", str(tmp_path)]) == 0
    r = json.loads((tmp_path / "cv.json").read_text())
    assert r["best"] in r["candidates"] and len(r["scores"]) == 2


def test_malformed_rows(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("lon,lat,elev_km,value,year\n-100,35,0.1,1.0,2000\n-100,abc,0,1,2000\n-100,35,0,1\n-200,35,0,1,2000\n")
    with pytest.raises(DataFormatError) as e:
        load_stations(str(p), domain=(-130, -60, 20, 50))
    assert [ln for ln, _ in e.value.problems] == [3, 4, 5]
    assert len(load_stations(str(p), domain=(-130, -60, 20, 50), skip_bad=True)) == 1
    cfg = tmp_path / "c.cfg"
    cfg.write_text(CFG.replace("simulated_stations.csv", "s.csv"))
    assert main(["fit", "--config", str(cfg), "--stationary"]) == 1
    assert "line 3" in capsys.readouterr().err


def test_bad_header_and_missing_file(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("x,y\n1,2\n")
    with pytest.raises(DataFormatError):
        load_stations(str(p))
    with pytest.raises(FileNotFoundError):
        load_stations(str(tmp_path / "nope.csv"))
    assert main(["fit", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_missing_sim_params(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("domain = 0, 1, 0, 1\nn_x = 4\nn_y = 4\n")
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert not os.path.exists(tmp_path / "simulated_stations.csv")
