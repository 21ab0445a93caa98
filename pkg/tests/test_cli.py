import json

import numpy as np
import pytest

from hacsurv import io
from hacsurv.cli import run

TINY = {
    "epochs": 3,
    "pairwise_epochs": 3,
    "regen_epochs": 3,
    "n_regen": 500,
    "batch_size": 256,
    "marginal": {"embed_width": 8, "head_width": 8, "mono_width": 8, "mono_layers": 2},
    "generator": {"n_atoms": 16, "hidden": 8, "n_layers": 1},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.json").write_text(json.dumps(TINY))
    assert run(["synth", "--n", "600", "--seed", "3", "--out", str(d / "data.csv")]) == 0
    return d


def _fit(d, variant, out):
    return run(
        ["fit", "--data", str(d / "data.csv"), "--variant", variant, "--config", str(d / "tiny.json"),
         "--grid-points", "20", "--out", str(d / out)]
    )


def test_synth_writes_data_and_sidecar(work):
    ds = io.read_dataset_csv(work / "data.csv")
    assert len(ds) == 600 and ds.n_events == 4
    meta = json.loads((work / "data.meta.json").read_text())
    assert {"truth_marginals", "event_fractions", "seed", "config_sha256"} <= set(meta)
    first = (work / "data.csv").read_text().splitlines()[0]
    assert first.startswith("# seed=3, config_sha256=")


def test_pipeline_independent(work):
    assert _fit(work, "independent", "ind.json") == 0
    assert run(["predict", "--model", str(work / "ind.json"), "--covariates", str(work / "data.csv"),
                "--out", str(work / "pred.csv")]) == 0
    assert run(["eval", "--predictions", str(work / "pred.csv"), "--data", str(work / "data.csv"),
                "--truth", str(work / "data.meta.json"), "--out", str(work / "eval.json")]) == 0
    rep = json.loads((work / "eval.json").read_text())
    ev = rep["events"]
    assert sorted(ev) == ["1", "2", "3"]  # censoring is not scored
    assert all(r["survival_l1"] >= 0.0 for r in ev.values())
    assert all(0.0 <= r["ctd"] <= 1.0 for r in ev.values() if r["ctd"] is not None)
    assert rep["seed"] == 0 and len(rep["config_sha256"]) == 64


def test_fit_reruns_are_byte_identical(work):
    assert _fit(work, "symmetric", "a.json") == 0
    assert _fit(work, "symmetric", "b.json") == 0
    assert (work / "a.json").read_bytes() == (work / "b.json").read_bytes()
    assert (work / "a.report.json").read_bytes() == (work / "b.report.json").read_bytes()
    assert "wall_clock_s" not in json.loads((work / "a.report.json").read_text())


def test_hierarchical_report_lists_stages_in_order(work):
    assert _fit(work, "hierarchical", "h.json") == 0
    rep = json.loads((work / "h.report.json").read_text())
    names = [s["name"] for s in rep["stages"]]
    i = names.index("structure selection")
    assert all(n.startswith("pairwise") for n in names[:i]) and len(names[:i]) == 6
    assert names[-1].startswith("marginals")
    assert rep["outer_generator_fixed"] is True


def test_pairwise_select_and_inner(work):
    assert run(["fit-pairwise", "--data", str(work / "data.csv"), "--pair", "1", "2", "--config",
                str(work / "tiny.json"), "--out", str(work / "p12.json")]) == 0
    p = json.loads((work / "p12.json").read_text())
    assert p["pair"] == [1, 2] and -1.0 <= p["tau"] <= 1.0
    taus = np.eye(4).tolist()
    taus[1][2] = taus[2][1] = 0.6
    for i, j in [(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)]:
        taus[i][j] = taus[j][i] = 0.3
    (work / "taus.json").write_text(json.dumps({"taus": taus}))
    assert run(["select-structure", "--taus", str(work / "taus.json"), "--out", str(work / "bp.json")]) == 0
    bp = json.loads((work / "bp.json").read_text())["blueprint"]
    assert bp["kind"] == "hierarchical" and bp["groups"] == [[1, 2]]
    outer = {"generator": {"kind": "parametric", "family": "clayton", "theta": 1.0}}
    (work / "outer.json").write_text(json.dumps(outer))
    assert run(["fit-inner", "--outer", str(work / "outer.json"), "--target", str(work / "p12.json"),
                "--config", str(work / "tiny.json"), "--out", str(work / "inner.json")]) == 0
    assert "generator" in json.loads((work / "inner.json").read_text())


def test_sample_copula_default_matches_tau(tmp_path):
    out = tmp_path / "u.csv"
    assert run(["sample-copula", "--copula", "default", "--n", "20000", "--seed", "1", "--out", str(out)]) == 0
    _, header, rows = io.read_csv(out)
    assert header == ["u0", "u1", "u2", "u3"]
    u = np.array([[float(v) for v in f] for _, f in rows])
    assert u.shape == (20000, 4) and np.all((u > 0) & (u < 1))
    from scipy.stats import kendalltau

    # nested Clayton: tau = theta / (theta + 2) with theta 1 across groups, 3 and 8 within
    sub = u[:4000]
    for (i, j), tau in {(1, 2): 1 / 3, (0, 1): 3 / 5, (2, 3): 4 / 5}.items():
        assert abs(kendalltau(sub[:, i], sub[:, j])[0] - tau) < 0.03


def test_schema_error_is_one_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x0,time,event\n0.5,1.0,1\n0.2,abc,0\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(TINY))
    code = run(["fit", "--data", str(bad), "--variant", "independent", "--config", str(cfg), "--out", str(tmp_path / "m.json")])
    err = capsys.readouterr().err.strip().splitlines()
    assert code == 2
    assert len(err) == 1 and err[0].startswith("error: schema:") and "line 3" in err[0] and "time" in err[0]


def test_missing_input_fails_cleanly(tmp_path, capsys):
    code = run(["predict", "--model", str(tmp_path / "nope.json"), "--covariates", str(tmp_path / "x.csv"),
                "--out", str(tmp_path / "p.csv")])
    assert code != 0
    assert capsys.readouterr().err.startswith("error:")
