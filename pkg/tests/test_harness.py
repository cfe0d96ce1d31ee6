import csv
import json
import math

import numpy as np
import pytest

from rotlim.errors import ConfigurationError, RegressionError
from rotlim.fitting import OrderFit, fit_order
from rotlim.harness import (
    SweepConfig,
    default_seed,
    emit_report,
    load_report,
    parse_config_file,
    run_convergence_suite,
)

EPS4 = (0.5, 0.25, 0.125, 0.0625)


def small_cfg(**kw):
    base = dict(eps_list=EPS4, n=32, T=0.2, frame_dt=0.02, t_skip=0.04, dt=0.005)
    base.update(kw)
    return SweepConfig(**base)


# --- fit_order -----------------------------------------------------------------------


def test_fit_exact_power():
    fit = fit_order([(e, e**2) for e in EPS4])
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_constant():
    fit = fit_order([(e, 7.0) for e in EPS4])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.band == pytest.approx(1.0)


def test_fit_noisy():
    rng = np.random.default_rng(3)
    eps = [2.0**-j for j in range(1, 9)]
    fit = fit_order([(e, e**1.5 * (1 + 0.1 * rng.standard_normal())) for e in eps])
    assert 1.3 <= fit.slope <= 1.7


def test_fit_band_against_target():
    fit = fit_order([(e, 3 * e) for e in EPS4], slope_target=1.0)
    assert fit.band == pytest.approx(1.0)
    assert OrderFit.from_dict(fit.to_dict()) == fit


def test_fit_zero_values_flag():
    fit = fit_order([(e, 0.0) for e in EPS4])
    assert fit.slope == math.inf


def test_fit_errors():
    with pytest.raises(RegressionError):
        fit_order([(e, e) for e in EPS4[:3]])
    with pytest.raises(RegressionError):
        fit_order([(0.5, 1.0), (0.5, 2.0), (0.25, 1.0), (0.25, 3.0)])
    with pytest.raises(RegressionError):
        fit_order([(0.5, 1.0), (0.25, -1.0), (0.125, 1.0), (0.0625, 1.0)])
    with pytest.raises(RegressionError):
        fit_order([(-0.5, 1.0), (0.25, 1.0), (0.125, 1.0), (0.0625, 1.0)])


# --- configuration --------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(eps_list=(0.5, 0.25, 0.125)),
        dict(eps_list=(0.5, 0.25, 0.25, 0.125)),
        dict(eps_list=(0.0625, 0.125, 0.25, 0.5)),
        dict(n=256),
        dict(T=3.0),
        dict(t_skip=0.2),
        dict(jobs=0),
        dict(dt=0.003),
        dict(frame_dt=0.03),
        dict(beta=0.5),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        small_cfg(**kw)


def test_config_dict_round_trip():
    cfg = small_cfg(seed=9)
    assert SweepConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.config_hash() == small_cfg(seed=9, jobs=3).config_hash()
    assert cfg.config_hash() != small_cfg(seed=10).config_hash()
    with pytest.raises(ConfigurationError):
        SweepConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_default_seed(monkeypatch):
    monkeypatch.delenv("ROTLIM_SEED", raising=False)
    assert default_seed(5) == 5
    monkeypatch.setenv("ROTLIM_SEED", "42")
    assert default_seed() == 42
    monkeypatch.setenv("ROTLIM_SEED", "forty")
    with pytest.raises(ConfigurationError):
        default_seed()


def test_parse_config_file(tmp_path):
    p = tmp_path / "run.conf"
    p.write_text("# sweep\n n = 32\nT=0.5\n\neps-list = 0.5 0.25\n", encoding="utf-8")
    assert parse_config_file(p) == {"n": "32", "T": "0.5", "eps-list": "0.5 0.25"}
    p.write_text("n 32\n")
    with pytest.raises(ConfigurationError):
        parse_config_file(p)
    p.write_text(" = 3\n")
    with pytest.raises(ConfigurationError):
        parse_config_file(p)
    with pytest.raises(ConfigurationError):
        parse_config_file(tmp_path / "missing.conf")


# --- suite ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def report():
    return run_convergence_suite(small_cfg())


def test_amplitude_zero_sweep():
    rep = run_convergence_suite(small_cfg(amp=0.0))
    for name in ("div_l2t", "residual_l2", "sigma_linf", "distance"):
        assert rep.metric(name) == [0.0] * 4
    assert rep.passed


def test_beta_two_routing():
    rep = run_convergence_suite(small_cfg(beta=2.0, eps_list=(0.5, 0.4, 0.3, 0.2)))
    assert rep.reference_beta_is_one is False
    assert rep.checks["all_members_ok"]


def test_report_contents(report):
    assert [m.eps for m in report.members] == list(EPS4)
    assert len({m.data_hash for m in report.members}) == 1
    assert report.checks["all_members_ok"]
    assert report.dt == 0.005
    assert all(len(m.residual_series) == 9 for m in report.members)
    assert set(report.fits) == {"div_l2t", "residual_l2", "sigma_linf", "distance"}


def test_csv_rows(report, tmp_path):
    path = emit_report(report, tmp_path / "r.csv")
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 16
    for name in ("div_l2t", "residual_l2", "sigma_linf", "distance"):
        sel = [r for r in rows if r["metric"] == name]
        assert [float(r["eps"]) for r in sel] == list(EPS4)
    assert {r["config_hash"] for r in rows} == {report.config_hash}
    assert {r["seed"] for r in rows} == {"0"}


def test_empty_sweep_csv(tmp_path):
    path = emit_report(None, tmp_path / "empty.csv")
    assert path.read_text() == "config_hash,seed,eps,metric,value,status\n"
    with pytest.raises(ConfigurationError):
        emit_report(None, tmp_path / "empty.json")


def test_json_round_trip(report, tmp_path):
    path = emit_report(report, tmp_path / "r.json")
    back = load_report(path)
    assert json.dumps(back.to_dict(), sort_keys=True) == json.dumps(report.to_dict(), sort_keys=True)
    assert back.config_hash == report.config_hash and back.seed == report.seed


def test_byte_identical(report, tmp_path):
    again = run_convergence_suite(small_cfg())
    for suffix in ("csv", "json"):
        a = emit_report(report, tmp_path / f"a.{suffix}").read_bytes()
        b = emit_report(again, tmp_path / f"b.{suffix}").read_bytes()
        assert a == b


def test_parallel_matches_serial(report, tmp_path):
    par = run_convergence_suite(small_cfg(jobs=2))
    a = emit_report(report, tmp_path / "s.json").read_bytes()
    b = emit_report(par, tmp_path / "p.json").read_bytes()
    assert json.loads(a)["members"] == json.loads(b)["members"]


def test_emit_errors(report, tmp_path):
    with pytest.raises(OSError, match="missing"):
        emit_report(report, tmp_path / "missing" / "r.json")
    with pytest.raises(ConfigurationError):
        emit_report(report, tmp_path / "r.txt", fmt="xml")
