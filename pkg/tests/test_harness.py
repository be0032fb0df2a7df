import math
import os

import pytest

from jointstab.ensemble import Dimensions
from jointstab.errors import UsageError
from jointstab.estimator import FitOptions
from jointstab.harness import (
    CSV_HEADER, SweepConfig, SweepResultRow, aggregate, emit_csv, emit_plot_script,
    format_csv, parse_csv, plot_layout, run_sweep,
)

TINY = Dimensions(4, 2, 1, 2)
FAST_FIT = FitOptions(restarts=2, max_outer_iterations=40)


def tiny_cfg(**kw):
    base = dict(dims=TINY, T_values=(6,), k_values=(2,), n_seeds=1, fit=FAST_FIT)
    base.update(kw)
    return SweepConfig(**base)


def row(**kw):
    base = dict(T=10, k=3, sigma_g=0.3, sigma_eta=2.0, r=0.25, method="joint", seed=0,
                fraction_stabilized=0.5, mean_rho=0.9, wall_time_ms=0.0)
    base.update(kw)
    return SweepResultRow(**base)


def test_header_is_frozen():
    assert CSV_HEADER == "T,k,sigma_g,sigma_eta,r,method,seed,fraction_stabilized,mean_rho,wall_time_ms"


def test_singleton_grid_gives_two_rows():
    rows = run_sweep(tiny_cfg())
    assert [r.method for r in rows] == ["joint", "individual"]
    assert rows[0].dataset_checksum == rows[1].dataset_checksum


def test_full_grid_row_count():
    cfg = tiny_cfg(sigma_g_values=(0.3, 0.6, 0.9, 1.2), k_values=(3, 4, 5), T_values=(8,),
                   n_seeds=10, fit=FitOptions(restarts=1, max_outer_iterations=5))
    rows = run_sweep(cfg)
    assert len(rows) == 240
    assert len(rows) == len(cfg.grid()) * len(cfg.r_values) * cfg.n_seeds * 2


def test_rows_sorted_and_paired():
    rows = run_sweep(tiny_cfg(T_values=(6, 8), r_values=(0.25, 4.0), n_seeds=2))
    assert rows == sorted(rows, key=SweepResultRow.sort_key)
    by_key = {}
    for r in rows:
        by_key.setdefault((r.T, r.k, r.sigma_g, r.sigma_eta, r.seed), set()).add(r.dataset_checksum)
    assert all(len(v) == 1 for v in by_key.values())


def test_sweep_deterministic_across_workers(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    cfg = tiny_cfg(T_values=(6, 7), n_seeds=3)
    run_sweep(SweepConfig(**{**cfg.__dict__, "output_path": str(a)}))
    run_sweep(SweepConfig(**{**cfg.__dict__, "output_path": str(b)}))
    run_sweep(SweepConfig(**{**cfg.__dict__, "output_path": str(c), "workers": 2}))
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_fixed_ensemble_mode():
    cfg = tiny_cfg(regenerate_ensemble_per_seed=False, n_seeds=3)
    assert len({cfg.ensemble_seed(s) for s in range(3)}) == 1
    assert len({tiny_cfg(n_seeds=3).ensemble_seed(s) for s in range(3)}) == 3
    assert len(run_sweep(cfg)) == 6


def test_unwritable_output_fails_first(tmp_path):
    with pytest.raises(OSError):
        run_sweep(tiny_cfg(output_path=str(tmp_path / "missing" / "out.csv")))
    with pytest.raises(OSError):
        run_sweep(tiny_cfg(output_path=str(tmp_path)))


def test_config_validation():
    with pytest.raises(UsageError):
        tiny_cfg(T_values=())
    with pytest.raises(UsageError):
        tiny_cfg(n_seeds=0)
    with pytest.raises(UsageError):
        tiny_cfg(T_values=(3,), k_values=(4,))


def test_aggregate_single_seed():
    (s,) = aggregate([row(fraction_stabilized=0.7)])
    assert s.stderr == 0.0 and s.single_seed and s.n_seeds == 1


def test_aggregate_two_seeds():
    (s,) = aggregate([row(fraction_stabilized=0.4), row(seed=1, fraction_stabilized=0.6)])
    assert s.mean_fraction == pytest.approx(0.5)
    assert s.stderr == pytest.approx(math.sqrt(0.02) / math.sqrt(2))
    assert s.stderr == pytest.approx(0.1)
    assert not s.single_seed


def test_aggregate_constant():
    (s,) = aggregate([row(seed=i, fraction_stabilized=0.35) for i in range(5)])
    assert s.stderr == 0.0


def test_aggregate_groups_by_method():
    summary = aggregate([row(), row(method="individual")])
    assert [s.method for s in summary] == ["joint", "individual"]


def test_emit_empty(tmp_path):
    path = tmp_path / "e.csv"
    emit_csv([], path)
    assert path.read_bytes() == (CSV_HEADER + "\n").encode()


def test_emit_one_row_golden(tmp_path):
    path = tmp_path / "one.csv"
    emit_csv([row(sigma_g=1.2, mean_rho=0.123456789012345, wall_time_ms=12.5)], path)
    assert path.read_bytes() == (
        CSV_HEADER + "\n" + "10,3,1.2,2,0.25,joint,0,0.5,0.123456789,12.5\n"
    ).encode()


def test_csv_round_trip():
    rows = [row(seed=i, fraction_stabilized=i / 7, mean_rho=math.pi * i) for i in range(4)]
    rows.append(row(method="individual", mean_rho=math.nan))
    text = format_csv(rows)
    back = parse_csv(text)
    assert format_csv(back) == text
    assert [(r.T, r.method, r.seed) for r in back] == [(r.T, r.method, r.seed) for r in rows]
    for a, b in zip(rows, back):
        assert b.fraction_stabilized == pytest.approx(a.fraction_stabilized, rel=1e-9)
    exact = [row(fraction_stabilized=0.25, mean_rho=0.75)]
    assert parse_csv(format_csv(exact)) == exact


def test_debug_checksum_column():
    text = format_csv([row(dataset_checksum="abc")], debug=True)
    assert text.splitlines()[0].endswith(",dataset_checksum")
    assert parse_csv(text)[0].dataset_checksum == "abc"


def fig_summary(sigma_gs=(0.3, 0.6, 0.9, 1.2), ks=(3, 4, 5), Ts=(5, 10, 15), rs=(0.25,)):
    rows = []
    for sg in sigma_gs:
        for k in ks:
            for T in Ts:
                for r in rs:
                    for method in ("joint", "individual"):
                        rows.append(row(T=T, k=k, sigma_g=sg, r=r, method=method))
    return aggregate(rows)


def read_script(tmp_path, summary):
    path = tmp_path / "p.gp"
    emit_plot_script(summary, path)
    return path.read_text()


def test_plot_T_sweep_layout(tmp_path):
    text = read_script(tmp_path, fig_summary())
    assert text.count("set title") == 4
    for sg in ("0.3", "0.6", "0.9", "1.2"):
        assert f"set title 'sigma_G = {sg}'" in text
    assert text.count("dt 1") == 12 and text.count("dt 2") == 12
    assert "set xlabel 'T'" in text


def test_plot_single_point(tmp_path):
    text = read_script(tmp_path, aggregate([row(), row(method="individual")]))
    assert text.count("set title") == 1
    assert text.count("yerrorlines") == 2
    assert text.count("\ne\n") + text.endswith("e\n") >= 2


def test_plot_r_sweep_layout(tmp_path):
    summary = fig_summary(sigma_gs=(0.3,), Ts=(15, 25), rs=(0.1, 0.25, 1.0, 4.0))
    assert plot_layout(summary) == ("r", ["T"])
    text = read_script(tmp_path, summary)
    assert text.count("set title") == 2
    assert "set xlabel 'r'" in text
    assert text.count("dt 1") == 6 and text.count("dt 2") == 6


def test_plot_rejects_empty(tmp_path):
    with pytest.raises(UsageError):
        emit_plot_script([], tmp_path / "x.gp")
