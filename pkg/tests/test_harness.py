import csv
import io
import json

import numpy as np
import pytest

from vemstab import cli, harness
from vemstab.errors import ConfigError, DeflationError, VemError
from vemstab.harness import (
    ExperimentConfig,
    PartialRun,
    TableRow,
    format_rows,
    resolve_element,
    run_fem_selfcheck,
    run_interp_rates,
    run_pspan,
    run_sequence,
)


def _cfg(**kw):
    kw.setdefault("refine", 1)
    return ExperimentConfig(**kw).validate()


@pytest.fixture(scope="module")
def pspan_rows():
    return run_pspan(_cfg(element="flatten:1", p=2, p_max=3, refine=2))


def _rows(rows, **match):
    return [r for r in rows if all(getattr(r, k) == v for k, v in match.items())]


def test_pspan_pattern(pspan_rows):
    assert len(pspan_rows) == 4
    assert [(r.p, r.stab) for r in pspan_rows] == [(2, "projection"), (2, "dofi"), (3, "projection"), (3, "dofi")]
    for r in pspan_rows:
        assert 0 < r.lambda_min < 1
        assert r.fem_refine_used == 2
    for stab in ("projection", "dofi"):
        lo, hi = (_rows(pspan_rows, stab=stab, p=p)[0] for p in (2, 3))
        assert hi.lambda_max > lo.lambda_max


def test_p2_stabilizations_close(pspan_rows):
    proj, dofi = _rows(pspan_rows, p=2)
    assert abs(proj.lambda_min / dofi.lambda_min - 1) < 0.2
    assert abs(proj.lambda_max / dofi.lambda_max - 1) < 0.2


def test_empty_p_range_gives_no_rows():
    assert run_pspan(_cfg(p=4, p_max=3)) == []
    assert cli.main(["pspan", "--p", "4", "--p-max", "3"]) == 0


def test_sequence_rows_and_regularity():
    rows = run_sequence(_cfg(family="hanging_node", stab="projection"))
    assert [r.element for r in rows] == [f"hanging_node:{i}" for i in range(1, 6)]
    lam = [r.lambda_min for r in rows]
    assert all(a > b for a, b in zip(lam, lam[1:]))
    rho = [r.rho_star for r in rows]
    assert all(a >= b for a, b in zip(rho, rho[1:]))


def test_flatten_condition_ordering():
    rows = run_sequence(_cfg(family="flatten", stab="projection"))
    assert all(r.cond_A <= r.cond_B for r in rows)
    cb = [r.cond_B for r in rows]
    assert all(a < b for a, b in zip(cb, cb[1:]))


def test_auto_refinement_stops_on_tolerance():
    m = harness.measure(harness.element_sequence("flatten", 1), 2, tol=0.05, cap=3)
    assert not m.cap_hit
    levels = [lev for lev, _ in m.history]
    assert levels == list(range(1, m.level + 1))


def test_auto_refinement_flags_cap():
    m = harness.measure(harness.element_sequence("hanging_node", 5), 3, tol=1e-9, cap=2)
    assert m.cap_hit and m.level == 2


def test_interp_rates_on_squares():
    (row,) = run_interp_rates(shapes=("square",), degrees=(2,))
    assert row.slope == pytest.approx(2.0, abs=0.2)


def test_fem_selfcheck_rates():
    h1, l2 = run_fem_selfcheck()
    assert h1.slope == pytest.approx(2.0, abs=0.15)
    assert l2.slope == pytest.approx(3.0, abs=0.2)


@pytest.mark.parametrize(
    "kw",
    [
        {"p": 1},
        {"p": 7},
        {"p": 3, "p_max": 10, "allow_high_p": True},
        {"stab": "weird"},
        {"boundary_term": "edges"},
        {"refine": -1},
        {"refine": "lots"},
        {"auto_refine_tol": 0.0},
        {"format": "xml"},
        {"jobs": 0},
        {"family": "triangle"},
        {"quad_safety": -1},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw).validate()


def test_high_p_allowed_behind_flag():
    cfg = ExperimentConfig(p=6, allow_high_p=True).validate()
    assert cfg.p_values == [6]


def test_config_unknown_key(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"p": 3, "colour": "red"}))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(f)


def test_resolve_element_from_file(tmp_path):
    f = tmp_path / "tri.json"
    f.write_text(json.dumps({"vertices": [[0, 0], [1, 0], [0, 1]]}))
    name, poly = resolve_element(str(f))
    assert name == "tri" and poly.n_vertices == 3
    with pytest.raises(ConfigError):
        resolve_element("flatten:9")
    with pytest.raises(ConfigError):
        resolve_element(str(tmp_path / "absent.json"))


def test_row_check_rejects_bad_values():
    row = TableRow("x", 3, "dofi", 0.1, 1.0, 10.0, 10.0, 1, 0.0)
    assert row.check() is row
    with pytest.raises(VemError):
        TableRow("x", 3, "dofi", float("nan"), 1.0, 10.0, 10.0, 1, 0.0).check()
    with pytest.raises(VemError):
        TableRow("x", 3, "dofi", 0.1, 1.0, 10.0, 10.0, 1, 0.0, residual=1e-6).check()


def test_csv_and_markdown(pspan_rows):
    text = format_rows(pspan_rows, "csv")
    recs = list(csv.DictReader(io.StringIO(text)))
    assert len(recs) == 4
    assert float(recs[0]["lambda_min"]) == pspan_rows[0].lambda_min
    md = format_rows(pspan_rows, "markdown").splitlines()
    assert md[0].startswith("| element | p | stab |")
    assert len(md) == 6


def _strip_wall(text):
    recs = list(csv.DictReader(io.StringIO(text)))
    for r in recs:
        r.pop("wall_time")
    return recs


def test_parallel_run_is_deterministic():
    base = dict(family="flatten", refine=1, p=2)
    a = format_rows(run_sequence(_cfg(**base, jobs=1)))
    b = format_rows(run_sequence(_cfg(**base, jobs=2)))
    assert _strip_wall(a) == _strip_wall(b)


def test_failed_row_keeps_completed_rows(monkeypatch):
    real = harness.measure

    def flaky(polygon, p, *a, **kw):
        if p == 3:
            raise DeflationError("synthetic failure")
        return real(polygon, p, *a, **kw)

    monkeypatch.setattr(harness, "measure", flaky)
    with pytest.raises(PartialRun) as info:
        run_pspan(_cfg(p=2, p_max=3))
    assert [r.p for r in info.value.rows] == [2, 2]
    assert "p=3" in str(info.value)


# ---------------------------------------------------------------- CLI


def test_cli_pspan_csv(tmp_path, capsys):
    out = tmp_path / "rows.csv"
    code = cli.main(["pspan", "--element", "flatten:1", "--p", "2", "--refine", "1", "--stab", "dofi", "--out", str(out)])
    assert code == 0
    recs = list(csv.DictReader(out.open()))
    assert len(recs) == 1 and recs[0]["stab"] == "dofi"


def test_cli_config_file_and_override(tmp_path, capsys):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"element": "flatten:2", "p": 2, "refine": 1, "stab": "projection", "format": "markdown"}))
    assert cli.main(["pspan", "--config", str(f), "--stab", "dofi"]) == 0
    out = capsys.readouterr().out
    assert "| flatten:2 | 2 | dofi |" in out


def test_cli_family_index(capsys):
    assert cli.main(["sequence", "--family", "flatten", "--index", "3", "--p", "2", "--refine", "0", "--stab", "dofi"]) == 0
    recs = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["element"] for r in recs] == ["flatten:3"]
    assert float(recs[0]["rho_star"]) > 0


@pytest.mark.parametrize(
    "argv",
    [
        ["pspan", "--p", "1"],
        ["pspan", "--p", "7"],
        ["pspan", "--element", "nowhere.json"],
        ["sequence", "--p", "3"],
        ["pspan", "--auto-refine-tol", "2"],
    ],
)
def test_cli_config_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_numerical_failure_exit_3(monkeypatch, capsys):
    def boom(*a, **kw):
        raise DeflationError("synthetic failure")

    monkeypatch.setattr(harness, "measure", boom)
    assert cli.main(["pspan", "--p", "2"]) == 3
    assert "synthetic failure" in capsys.readouterr().err


def test_cli_cache_commands(tmp_path, capsys):
    d = str(tmp_path / "c")
    assert cli.main(["pspan", "--p", "2", "--refine", "0", "--cache-dir", d]) == 0
    capsys.readouterr()
    assert cli.main(["cache", "list", "--cache-dir", d]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0])["p"] == 2
    assert cli.main(["cache", "verify", "--cache-dir", d]) == 0
    assert capsys.readouterr().out.strip().endswith("ok")
    assert cli.main(["cache", "clear", "--cache-dir", d]) == 0
    capsys.readouterr()
    assert cli.main(["cache", "verify", "--cache-dir", d]) == 0
    assert capsys.readouterr().out == ""


def test_cli_cache_verify_reports_corruption(tmp_path, capsys):
    d = tmp_path / "c"
    assert cli.main(["pspan", "--p", "2", "--refine", "0", "--cache-dir", str(d)]) == 0
    npz = next(d.glob("*.npz"))
    npz.write_bytes(npz.read_bytes()[:-10] + b"0123456789")
    capsys.readouterr()
    assert cli.main(["cache", "verify", "--cache-dir", str(d)]) == 0
    cap = capsys.readouterr()
    assert "checksum mismatch" in cap.out
    assert "1 corrupted" in cap.err


def test_cli_selfcheck(capsys):
    assert cli.main(["selfcheck", "--format", "markdown"]) == 0
    assert "taylor_hood_h1" in capsys.readouterr().out
