import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fphmr.cli import main
from fphmr.snapshots import ParameterBox
from fphmr.study import RunConfig, config_from_ini, config_to_ini, parse_exponents, richardson_adjust

FAST = ["--h-exponents", "3", "--ref-exponent", "4"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_exponents():
    assert parse_exponents("3..7") == (3, 4, 5, 6, 7)
    assert parse_exponents("3, 5") == (3, 5)
    with pytest.raises(ValueError):
        parse_exponents("5..3")


intervals = st.tuples(st.floats(-10, 10), st.floats(0, 10)).map(lambda p: (p[0], p[0] + p[1]))


@settings(max_examples=50)
@given(
    st.lists(st.integers(1, 8), min_size=1, max_size=4, unique=True),
    st.integers(0, 3), st.integers(1, 20), st.sampled_from(["truth", "pde"]),
    st.integers(1, 10**4), st.integers(0, 2**63 - 1), st.floats(0.01, 1.0),
    intervals, st.integers(1, 3),
)
def test_config_round_trip(exps, extra, m_max, source, n, seed, cfl, P, q):
    cfg = RunConfig(
        h_exponents=tuple(exps), ref_exponent=max(exps) + extra, m_max=m_max, source=source,
        n_sample=n, seed=seed, cfl=cfl, box=ParameterBox(P=P, n_quad=q),
    )
    text = config_to_ini(cfg)
    back = config_from_ini(text)
    assert back == cfg
    assert config_to_ini(back) == text


def test_config_overrides_and_validation():
    base = config_to_ini(RunConfig(m_max=4))
    assert config_from_ini(base, {"m_max": 7, "seed": None}).m_max == 7
    with pytest.raises(ValueError):
        config_from_ini("[run]\nbogus = 1\n")
    with pytest.raises(ValueError):
        config_from_ini("[other]\na = 1\n")
    with pytest.raises(ValueError):
        RunConfig(h_exponents=(5,), ref_exponent=4)
    with pytest.raises(ValueError):
        RunConfig(scenario="nope")
    with pytest.raises(ValueError):
        RunConfig(m_max=0)


def test_richardson_adjust():
    # first-order error model e(h, h_ref) = C (h - h_ref)
    C, h = 0.7, 2.0**-3
    assert richardson_adjust(C * (h - 2.0**-7), h, 2.0**-7, 2.0**-9) == pytest.approx(C * (h - 2.0**-9))


def test_dump_config(capsys, tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nm_max = 5\nseed = 9\n")
    assert main(["legendre", "--config", str(ini), "--seed", "11", "--dump-config"]) == 0
    cfg = config_from_ini(capsys.readouterr().out)
    assert cfg.m_max == 5 and cfg.seed == 11


def test_reference_against_itself_is_zero(tmp_path):
    out = tmp_path / "r"
    assert main(["reference", "--h-exponents", "3", "--ref-exponent", "3", "--out", str(out)]) == 0
    (row,) = rows(out / "discretization.csv")
    assert float(row["error"]) == 0.0
    assert (out / "reference_n3.csv").read_text().startswith("t,x,value\n")


def test_legendre_m1_single_row(tmp_path):
    out = tmp_path / "l"
    assert main(["legendre", *FAST, "--m-max", "1", "--out", str(out)]) == 0
    (row,) = rows(out / "legendre.csv")
    assert row["method"] == "legendre" and row["m"] == "1" and float(row["h"]) == 0.125


def test_greedy_pde_byte_determinism(tmp_path):
    args = ["greedy", *FAST, "--source", "pde", "--n-sample", "12", "--m-max", "3", "--seed", "5"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "greedy_pde.csv").read_bytes()
    assert a == (tmp_path / "b" / "greedy_pde.csv").read_bytes()
    (da,) = (tmp_path / "a" / "greedy_pde").iterdir()
    (db,) = (tmp_path / "b" / "greedy_pde").iterdir()
    assert da.name == db.name
    for f in sorted(da.iterdir()):
        assert f.read_bytes() == (db / f.name).read_bytes()
    chosen = rows(da / "chosen.csv")
    assert [r["m"] for r in chosen] == ["1", "2", "3"]
    assert len(list(da.glob("basis_m*.txt"))) == 3


def test_greedy_artifacts_keyed_by_config(tmp_path):
    out = tmp_path / "g"
    base = ["greedy", *FAST, "--source", "pde", "--n-sample", "6", "--m-max", "1", "--out", str(out)]
    assert main([*base, "--seed", "1"]) == 0
    assert main([*base, "--seed", "2"]) == 0
    assert len(list((out / "greedy_pde").iterdir())) == 2


def test_report_merges_and_writes_plot_files(tmp_path, capsys):
    out = str(tmp_path / "rep")
    assert main(["reference", *FAST, "--out", out]) == 0
    assert main(["legendre", *FAST, "--m-max", "2", "--out", out]) == 0
    assert main(["greedy", *FAST, "--m-max", "2", "--source", "truth", "--out", out]) == 0
    capsys.readouterr()
    assert main(["report", "--out", out]) == 0
    captured = capsys.readouterr()
    assert "legendre" in captured.out and "greedy_truth" in captured.out
    assert "greedy_pde.csv" in captured.err
    plot = rows(tmp_path / "rep" / "plot_h3.csv")
    assert [r["m"] for r in plot] == ["1", "2"]
    assert set(plot[0]) == {"m", "legendre_err", "greedy_truth_err", "greedy_pde_err", "discretization_err"}
    assert plot[0]["greedy_pde_err"] == "" and float(plot[0]["discretization_err"]) > 0
    merged = rows(tmp_path / "rep" / "errors_merged.csv")
    assert {r["method"] for r in merged} == {"legendre", "greedy_truth"}


def test_report_empty_directory(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 1
    assert "nothing to report" in capsys.readouterr().err


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["legendre", "--config", str(tmp_path / "missing.ini")]) == 1
    assert "missing.ini" in capsys.readouterr().err
    assert main(["legendre", "--h-exponents", "5", "--ref-exponent", "4", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["legendre", "--source", "nonsense"])
    assert exc.value.code == 2
