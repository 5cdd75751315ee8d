import csv
import datetime as dt
import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from tcpd.cli import main
from tcpd.pipeline import IngestConfig, calendar_cell
from tcpd.synth import planted_instance, random_tucker
from tcpd.tensor import read_dtf, write_dtf


def _json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def _csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def planted(tmp_path):
    inst = planted_instance((20, 20, 20), (2, 2, 2), 0.05, seed=1)
    p = tmp_path / "obs.dtf"
    write_dtf(p, inst.observed)
    return inst, str(p)


# --- decompose --------------------------------------------------------------------

def test_decompose_planted(tmp_path, planted):
    inst, src = planted
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 2], "row_cards": [10, 10, 10]})
    out = tmp_path / "out"
    assert main(["decompose", "--input", src, "--config", cfg, "--output", str(out)]) == 0
    trace = _csv_rows(out / "trace.csv")
    assert float(trace[-1]["residual"]) <= 1e-7
    low = read_dtf(out / "L.dtf")
    assert np.linalg.norm(low - inst.low_rank_truth) <= 1e-5 * np.linalg.norm(inst.low_rank_truth)
    assert np.array_equal(read_dtf(out / "S.dtf") != 0, inst.sparse_truth != 0)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["iterations"] == len(trace)
    sets = json.loads((out / "index_sets.json").read_text())
    assert [len(r) for r in sets["row_sets"]] == [10, 10, 10]


def test_decompose_seed_override_is_reproducible(tmp_path, planted):
    _, src = planted
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 2], "row_cards": [8, 8, 8]})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        main(["decompose", "--input", src, "--config", cfg, "--output", str(out), "--seed", "5"])
        outs.append(out)
    for f in ("L.dtf", "S.dtf", "index_sets.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert json.loads((outs[0] / "index_sets.json").read_text())["seed"] == 5


def test_decompose_bad_gamma(tmp_path, planted, capsys):
    _, src = planted
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 2], "row_cards": [8, 8, 8], "gamma": 1.5})
    out = tmp_path / "out"
    assert main(["decompose", "--input", src, "--config", cfg, "--output", str(out)]) == 1
    assert "gamma" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_decompose_infeasible_rank_writes_nothing(tmp_path, planted, capsys):
    _, src = planted
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 25], "row_cards": [8, 8, 8]})
    out = tmp_path / "out"
    assert main(["decompose", "--input", src, "--config", cfg, "--output", str(out)]) == 1
    assert "ranks" in capsys.readouterr().err
    assert not any(out.iterdir())


def test_decompose_zero_tensor(tmp_path):
    src = tmp_path / "z.dtf"
    write_dtf(src, np.zeros((5, 5, 5)))
    cfg = _json(tmp_path / "c.json", {"ranks": [1, 1, 1], "row_cards": [2, 2, 2]})
    out = tmp_path / "out"
    assert main(["decompose", "--input", str(src), "--config", cfg, "--output", str(out)]) == 0
    assert len(_csv_rows(out / "trace.csv")) == 1


def test_decompose_budget_exit_code(tmp_path, planted):
    _, src = planted
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 2], "row_cards": [8, 8, 8], "max_iters": 2})
    out = tmp_path / "out"
    assert main(["decompose", "--input", src, "--config", cfg, "--output", str(out)]) == 2
    assert len(_csv_rows(out / "trace.csv")) == 2


def test_decompose_missing_and_corrupt_input(tmp_path, capsys):
    cfg = _json(tmp_path / "c.json", {"ranks": [1], "row_cards": [1]})
    assert main(["decompose", "--input", str(tmp_path / "nope.dtf"), "--config", cfg,
                 "--output", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.dtf"
    bad.write_bytes(b"XXXX")
    assert main(["decompose", "--input", str(bad), "--config", cfg, "--output", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "not found" in err and "magic" in err.lower()


# --- synth-bench ------------------------------------------------------------------------

def test_bench_trivial_point(tmp_path):
    cfg = _json(tmp_path / "b.json", {"dims": [6, 6, 6], "ranks": [1, 1, 1], "densities": [0.0],
                                      "row_cards": [3], "trials": 1})
    out = tmp_path / "out"
    assert main(["synth-bench", "--config", cfg, "--output", str(out)]) == 0
    (row,) = _csv_rows(out / "bench.csv")
    assert row["status"] == "ok" and float(row["low_rank_error"]) < 1e-10
    assert json.loads((out / "manifest.json").read_text())["rows"] == 1


def test_bench_reproducible(tmp_path):
    doc = {"dims": [10, 10, 10], "ranks": [2, 2, 2], "densities": [0.05], "row_cards": [4, 6],
           "trials": 2, "seed": 3}
    cfg = _json(tmp_path / "b.json", doc)
    for name in ("a", "b"):
        assert main(["synth-bench", "--config", cfg, "--output", str(tmp_path / name)]) == 0
    a, b = ((tmp_path / n / "bench.csv").read_bytes() for n in ("a", "b"))
    assert a == b
    rows = _csv_rows(tmp_path / "a" / "bench.csv")
    assert len(rows) == 4 and len(_csv_rows(tmp_path / "a" / "timings.csv")) == 4


def test_bench_infeasible_point_is_reported(tmp_path):
    cfg = _json(tmp_path / "b.json", {"dims": [8, 8, 8], "ranks": [3, 3, 3], "densities": [0.05],
                                      "row_cards": [2, 5], "trials": 1})
    out = tmp_path / "out"
    assert main(["synth-bench", "--config", cfg, "--output", str(out)]) == 0
    bad, good = _csv_rows(out / "bench.csv")
    assert bad["status"].startswith("error") and "ranks" in bad["status"]
    assert good["status"] == "ok"


def test_bench_bad_config(tmp_path, capsys):
    cfg = _json(tmp_path / "b.json", {"dims": [4], "ranks": [1], "densities": [0.0],
                                      "row_cards": [2], "solver": {"seed": 1}})
    assert main(["synth-bench", "--config", cfg, "--output", str(tmp_path / "o")]) == 1
    assert "solver.seed" in capsys.readouterr().err


# --- ingest -----------------------------------------------------------------------------

TRIPS = (
    "VendorID,tpep_dropoff_datetime,DOLocationID\n"
    "1,2018-01-01 00:05:00,161\n"
    "1,2018-01-01 00:59:00,161\n"
    "2,2018-07-04 21:30:00,237\n"
    "2,2018-07-04 21:45:00,999\n"
    "1,2018-12-31 23:00:00,236\n"
)


def test_ingest_fixture(tmp_path):
    src = tmp_path / "trips.csv"
    src.write_text(TRIPS)
    zones = list(range(161, 242))
    cfg = _json(tmp_path / "i.json", {"year": 2018, "zones": zones})
    out = tmp_path / "out"
    assert main(["ingest", "--input", str(src), "--config", cfg, "--output", str(out)]) == 0
    raw = (out / "tensor.dtf").read_bytes()
    assert struct.unpack("<5I", raw[4:24]) == (4, 24, 7, 53, 81)
    t = read_dtf(out / "tensor.dtf")
    stats = json.loads((out / "stats.json").read_text())
    assert stats["accepted"] == 5 and stats["dropped_zone"] == 1
    assert t.sum() == stats["accepted"] - stats["dropped_zone"] == 4
    assert t[0, 0, 0, 0] == 2.0


def test_ingest_top_zones(tmp_path):
    src = tmp_path / "trips.csv"
    src.write_text(TRIPS)
    cfg = _json(tmp_path / "i.json", {"year": 2018, "top_zones": 2})
    out = tmp_path / "out"
    assert main(["ingest", "--input", str(src), "--config", cfg, "--output", str(out)]) == 0
    assert json.loads((out / "ingest_config.json").read_text())["zones"] == [161, 236]
    assert read_dtf(out / "tensor.dtf").shape == (24, 7, 53, 2)


def test_ingest_empty(tmp_path):
    src = tmp_path / "trips.csv"
    src.write_text("tpep_dropoff_datetime,DOLocationID\n")
    cfg = _json(tmp_path / "i.json", {"year": 2018, "zones": [1, 2]})
    out = tmp_path / "out"
    assert main(["ingest", "--input", str(src), "--config", cfg, "--output", str(out)]) == 0
    assert not read_dtf(out / "tensor.dtf").any()
    stats = json.loads((out / "stats.json").read_text())
    assert all(stats[k] == 0 for k in ("accepted", "skipped", "out_of_year", "dropped_zone"))


def test_ingest_missing_column(tmp_path, capsys):
    src = tmp_path / "trips.csv"
    src.write_text("a,b\n1,2\n")
    cfg = _json(tmp_path / "i.json", {"year": 2018, "zones": [1]})
    out = tmp_path / "out"
    assert main(["ingest", "--input", str(src), "--config", cfg, "--output", str(out)]) == 1
    assert "tpep_dropoff_datetime" in capsys.readouterr().err
    assert not any(out.iterdir())


# --- detect and report ------------------------------------------------------------------

def _planted_sparse(tmp_path):
    cfg = IngestConfig(2018, (10, 20, 30))
    s = np.zeros(cfg.shape)
    rng = np.random.default_rng(0)
    s.ravel()[rng.choice(s.size, 50, replace=False)] = rng.uniform(0.1, 1.0, 50)
    _, d, w = calendar_cell(dt.datetime(2018, 7, 4))
    s[20, d, w, 1] = 9.0
    src = tmp_path / "S.dtf"
    write_dtf(src, s)
    conf = _json(tmp_path / "i.json", cfg.to_dict())
    return str(src), conf


def test_detect_planted(tmp_path):
    src, conf = _planted_sparse(tmp_path)
    ev = tmp_path / "ev.csv"
    ev.write_text("date,zones,label\n2018-07-04,20,planted\n")
    out = tmp_path / "out"
    assert main(["detect", "--input", src, "--config", conf, "--events", str(ev),
                 "--output", str(out)]) == 0
    rows = _csv_rows(out / "detections.csv")
    assert [r["k_percent"] for r in rows] == ["0.014", "0.07", "0.14", "0.3", "0.7", "1.0", "2.0", "3.0"]
    counts = [int(r["detected"]) for r in rows]
    assert counts == [1] * 8
    ranked = _csv_rows(out / "ranked.csv")
    assert ranked[0]["date"] == "2018-07-04" and ranked[0]["zone_id"] == "20"
    assert len(ranked) == int(rows[-1]["selected"])


def test_detect_empty_events_and_threshold_list(tmp_path):
    src, conf = _planted_sparse(tmp_path)
    ev = tmp_path / "ev.csv"
    ev.write_text("date,zones,label\n")
    out = tmp_path / "out"
    assert main(["detect", "--input", src, "--config", conf, "--events", str(ev),
                 "--output", str(out), "--threshold-list", "0.5,5", "--pool-hours"]) == 0
    rows = _csv_rows(out / "detections.csv")
    assert [(r["k_percent"], r["detected"]) for r in rows] == [("0.5", "0"), ("5.0", "0")]


def test_detect_malformed_events(tmp_path, capsys):
    src, conf = _planted_sparse(tmp_path)
    ev = tmp_path / "ev.csv"
    ev.write_text("date,zones\nsoon,20\n")
    out = tmp_path / "out"
    assert main(["detect", "--input", src, "--config", conf, "--events", str(ev),
                 "--output", str(out)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert not any(out.iterdir())


def test_report(tmp_path, planted, capsys):
    _, src = planted
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 2], "row_cards": [10, 10, 10]})
    out = tmp_path / "out"
    main(["decompose", "--input", src, "--config", cfg, "--output", str(out)])
    capsys.readouterr()
    assert main(["report", "--input", str(out)]) == 0
    assert "stop: converged" in capsys.readouterr().out
    assert main(["report", "--input", str(tmp_path / "missing")]) == 1


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "tcpd.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("decompose", "synth-bench", "ingest", "detect", "report"):
        assert name in proc.stdout


def test_low_rank_only_file_round_trip(tmp_path):
    t, _, _ = random_tucker((9, 9, 9), (2, 2, 2), seed=2)
    src = tmp_path / "t.dtf"
    write_dtf(src, t)
    cfg = _json(tmp_path / "c.json", {"ranks": [2, 2, 2], "row_cards": [4, 4, 4]})
    out = tmp_path / "out"
    assert main(["decompose", "--input", str(src), "--config", cfg, "--output", str(out)]) == 0
    assert not read_dtf(out / "S.dtf").any()
