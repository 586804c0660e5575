import csv
import hashlib
import json
import math

import numpy as np
import pytest

from qrlob import cli, fixtures, ingest
from qrlob.core import IntensityModel, LobState
from qrlob.rng import path_rng
from qrlob.simulate import simulate_period

import make_golden


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_law(path):
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["dims", "sizes", "prob"]
    probs = {}
    for dims, sizes, p in rows[1:]:
        probs[int(sizes)] = float(p)
    out = np.zeros(max(probs) + 1)
    for k, v in probs.items():
        out[k] = v
    return out


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# -- ingest ---------------------------------------------------------------------------


def _write_l2(path, rows):
    head = "ts_ns,bp1,bp2,bv1,bv2,ap1,ap2,av1,av2\n"
    path.write_text(head + "".join(r + "\n" for r in rows))


def test_ingest_malformed_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    _write_l2(p, ["1,10.00,9.99,100,100,10.01,10.02,100,100", "2,10.00,9.99,100"])
    assert run("ingest", "--in", p, "--k", "2", "--session", "all", "--out", tmp_path / "o") == 2
    err = error_of(capsys)
    assert err["exit"] == 2 and "line 3" in err["message"]


def test_ingest_empty_file(tmp_path, capsys):
    for body in ("", "ts_ns,bp1,bv1,ap1,av1\n"):
        p = tmp_path / "empty.csv"
        p.write_text(body)
        assert run("ingest", "--in", p, "--k", "1", "--out", tmp_path / "o") == 2
        assert "no snapshots" in error_of(capsys)["message"]


def test_ingest_missing_file_and_too_few_levels(tmp_path, capsys):
    assert run("ingest", "--in", tmp_path / "nope.csv", "--out", tmp_path / "o") == 2
    p = tmp_path / "l2.csv"
    _write_l2(p, ["1,10.00,9.99,100,100,10.01,10.02,100,100"])
    assert run("ingest", "--in", p, "--k", "3", "--out", tmp_path / "o") == 2
    assert "levels" in error_of(capsys)["message"]


def test_ingest_outputs_and_manifest(tmp_path):
    data = fixtures.sample_l2_path()
    out = tmp_path / "ing"
    assert run("ingest", "--in", data, "--k", "3", "--session", "10:00-14:00", "--out", out) == 0
    names = {p.name for p in out.iterdir()}
    assert {"events_queue.csv", "events_pair12.csv", "events_pair-11.csv", "qc.json", "laws.json",
            "manifest.json"} <= names
    assert not [n for n in names if n.startswith(".")]
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "ingest" and man["seed"] is None
    assert man["inputs"][str(data)] == hashlib.sha256(open(data, "rb").read()).hexdigest()
    assert sorted(man["outputs"]) == man["outputs"] and "qc.json" in man["outputs"]
    canon = json.dumps(man["config"], sort_keys=True, separators=(",", ":"))
    assert man["config_hash"] == hashlib.sha256(canon.encode()).hexdigest()
    qc = json.loads((out / "qc.json").read_text())
    assert qc["session"] == "10:00-14:00" and 0 < qc["n_in_session"] < qc["n_snapshots"]


# -- estimate -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ingested(tmp_path_factory):
    root = tmp_path_factory.mktemp("golden")
    path = make_golden.estimate_model_i(root)
    return root, path


def test_estimate_matches_golden(ingested):
    _, path = ingested
    got = json.loads(path.read_text())
    want = json.loads(open(make_golden.DATA / "golden_model_i.json").read())
    assert got == want


def test_golden_is_close_to_the_generating_fixture():
    m = IntensityModel.load(make_golden.DATA / "golden_model_i.json")
    true = fixtures.model_i()
    # insertion and cancellation cells of the sizes the bundled day visits most
    errs = [m.rate(d, "all", t, n) / true.rate(d, "all", t, n) - 1
            for d in (1, 2, 3) for t in "LC" for n in range(2, 17)]
    assert np.max(np.abs(errs)) < 0.15 and np.median(np.abs(errs)) < 0.06


def test_estimate_other_models(ingested, tmp_path):
    root, _ = ingested
    assert run("estimate", "--events", root / "ing", "--model", "iib", "--force", "--out", tmp_path / "b") == 0
    doc = json.loads((tmp_path / "b" / "model.json").read_text())
    assert doc["kind"] == "ModelIIb" and 0 < doc["m"] < doc["l"]
    assert run("estimate", "--events", root / "ing", "--model", "poisson", "--out", tmp_path / "p") == 0
    assert json.loads((tmp_path / "p" / "model.json").read_text())["kind"] == "PoissonBaseline"
    lines = (tmp_path / "p" / "ci.csv").read_text().splitlines()
    assert len(lines) > 1


def _nonergodic_events(root):
    m = fixtures.constant_model_i(1.2, 1.0, K=1, cap=30)
    p = simulate_period(LobState((5, 5), 4001), m, math.inf, path_rng(1, 0), max_events=20000)
    root.mkdir()
    ingest.records_from_path(p, "queue").write_csv(root / "events_queue.csv")
    (root / "qc.json").write_text(json.dumps({"aes": [100.0], "tick": 0.01}))
    return root


def test_estimate_nonergodic_exit_3(tmp_path, capsys):
    ev = _nonergodic_events(tmp_path / "ev")
    assert run("estimate", "--events", ev, "--model", "i", "--out", tmp_path / "a") == 3
    err = error_of(capsys)
    assert err["error"] == "ModelError" and "--force" in err["message"]
    assert not (tmp_path / "a" / "model.json").exists()
    assert run("estimate", "--events", ev, "--model", "i", "--force", "--out", tmp_path / "b") == 0
    assert (tmp_path / "b" / "model.json").exists()


# -- invariant ------------------------------------------------------------------------


def test_invariant_closed_vs_mc(tmp_path):
    assert run("invariant", "--model", "fixture:i", "--method", "closed", "--queue", "1",
               "--out", tmp_path / "c") == 0
    assert run("invariant", "--model", "fixture:i", "--method", "mc", "--queue", "1", "--n-events", 10**6,
               "--seed", 5, "--out", tmp_path / "m") == 0
    a, b = read_law(tmp_path / "c" / "invariant.csv"), read_law(tmp_path / "m" / "invariant.csv")
    n = max(a.size, b.size)
    tv = 0.5 * np.abs(np.pad(a, (0, n - a.size)) - np.pad(b, (0, n - b.size))).sum()
    assert tv < 0.01
    assert json.loads((tmp_path / "m" / "manifest.json").read_text())["seed"] == 5
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["seed"] is None


def test_invariant_qbd(tmp_path):
    assert run("invariant", "--model", "fixture:iia", "--method", "qbd", "--n-phase", 30,
               "--out", tmp_path / "q") == 0
    meta = json.loads((tmp_path / "q" / "invariant_meta.json").read_text())
    assert meta["dims"] == [1, 2]


def test_config_merge_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "fixture:i", "method": "closed", "queue": 2}))
    assert run("invariant", "--config", cfg, "--queue", "3", "--out", tmp_path / "o") == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"] == {"model": "fixture:i", "method": "closed", "queue": 3}
    meta = json.loads((tmp_path / "o" / "invariant_meta.json").read_text())
    assert meta["dims"] == [3]


def test_schema_violation_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "fixture:i", "n_events": "many"}))
    assert run("invariant", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "n_events" in error_of(capsys)["message"]
    cfg.write_text("[1, 2]")
    assert run("invariant", "--config", cfg, "--out", tmp_path / "o") == 2
    assert run("invariant", "--model", "fixture:nope", "--out", tmp_path / "o") == 2
    # nothing is computed before validation, so no manifest appears
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_auto_seed_recorded(tmp_path):
    assert run("simulate", "--model", "fixture:i", "--theta", 0.5, "--theta-reinit", 0.5, "--horizon-s", 600,
               "--n-paths", 2, "--out", tmp_path / "s") == 0
    man = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert isinstance(man["seed"], int)
    rows = (tmp_path / "s" / "paths.csv").read_text().splitlines()
    assert rows[0] == "path,vol,eta,n_pref_changes,n_c,n_a" and len(rows) == 3


# -- calibrate / execprob / tca / impact -------------------------------------------------


def test_calibrate_full_grid(tmp_path):
    assert run("calibrate", "--model", "fixture:i", "--grid", "11x11", "--horizon-s", 60, "--n-paths", 2,
               "--seed", 1, "--out", tmp_path / "c") == 0
    rows = list(csv.reader(open(tmp_path / "c" / "surface.csv")))
    assert len(rows) == 1 + 121
    assert {(float(r[0]), float(r[1])) for r in rows[1:]} == \
        {(a, b) for a in np.linspace(0, 1, 11) for b in np.linspace(0, 1, 11)}


def test_calibrate_inversion_output(tmp_path):
    assert run("calibrate", "--model", "fixture:i", "--grid", "3x3", "--horizon-s", 1800, "--n-paths", 4,
               "--seed", 2, "--target-vol", 0.002, "--target-eta", 0.3, "--out", tmp_path / "c") == 0
    inv = json.loads((tmp_path / "c" / "inversion.json").read_text())
    assert 0 <= inv["theta"] <= 1 and 0 <= inv["theta_reinit"] <= 1


def test_execprob(tmp_path, capsys):
    assert run("execprob", "--model", "fixture:i", "--q", "3,3,2,2,3,3", "--n0", "1,4", "--n-paths", 5000,
               "--seed", 3, "--out", tmp_path / "e") == 0
    rows = list(csv.DictReader(open(tmp_path / "e" / "execprob.csv")))
    assert [int(r["n0"]) for r in rows] == [1, 4]
    assert float(rows[0]["p"]) > float(rows[1]["p"])
    assert run("execprob", "--model", "fixture:i", "--q", "3,3", "--n0", "1", "--seed", 3,
               "--out", tmp_path / "f") == 2


def test_tca_matches_golden_summary(tmp_path):
    path = make_golden.tca_summary(tmp_path)
    want = json.loads(open(make_golden.DATA / "golden_tca_summary.json").read())
    assert json.loads(path.read_text()) == want
    assert want["n_paths"] == 200


def test_impact(tmp_path):
    assert run("impact", "--model", "fixture:i", "--tactic", "t1", "--n", "0,4", "--t", "30,60",
               "--n-paths", 10, "--seed", 4, "--out", tmp_path / "i") == 0
    rows = list(csv.DictReader(open(tmp_path / "i" / "impact.csv")))
    assert len(rows) == 4
    assert all(float(r["mi"]) == 0.0 for r in rows if r["n_aes"] == "0")
