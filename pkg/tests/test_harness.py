import math

import numpy as np
import pytest

from magros.harness import (ERROR_FLOOR, ComparisonResult, ConvergenceReport, estimate_order,
                            spatial_convergence_study, temporal_convergence_study)
from magros.integrator import TimeGrid, magros_run
from magros.problems import adr_problem, heat_problem, scalar_linear_exact, scalar_linear_system


def test_estimate_order_examples():
    est = estimate_order([1e-2, 2.5e-3], [0.1, 0.05])
    assert est.slope == pytest.approx(2.0, abs=1e-12)
    assert est.pairwise == [pytest.approx(2.0, abs=1e-12)]
    assert estimate_order([4.0, 2.0, 1.0], [1.0, 0.5, 0.25]).slope == pytest.approx(1.0, abs=1e-12)


def test_estimate_order_is_least_squares():
    rng = np.random.default_rng(0)
    steps = 1.0 / np.array([16, 32, 64, 128, 256])
    errors = 3.0 * steps**2 * np.exp(rng.normal(scale=0.05, size=steps.size))
    slope = estimate_order(errors, steps).slope
    # oracle: normal equations of the 1D fit
    X = np.column_stack([np.log(steps), np.ones(steps.size)])
    expected = np.linalg.solve(X.T @ X, X.T @ np.log(errors))[0]
    assert slope == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("errors, steps", [([1.0], [1.0]), ([1.0, 0.0], [1.0, 0.5]),
                                           ([1.0, -1.0], [1.0, 0.5]), ([1.0, 2.0], [1.0])])
def test_estimate_order_rejects(errors, steps):
    with pytest.raises(ValueError):
        estimate_order(errors, steps)


def test_report_below_floor():
    rep = ConvergenceReport("x", "temporal", [1, 2], [1.0, 0.5], [ERROR_FLOOR / 10, ERROR_FLOOR / 100])
    rep.fit()
    assert rep.below_floor
    assert math.isnan(rep.slope)
    assert "below round-off" in rep.summary()


def test_report_skips_failed_rows():
    rep = ConvergenceReport("x", "temporal", [16, 32, 64], [1 / 16, 1 / 32, 1 / 64], [math.nan, 1e-3, 2.5e-4],
                            failures={16: "InstabilityError: boom"})
    rep.fit()
    assert rep.slope == pytest.approx(2.0)
    assert "FAILED at 16" in rep.summary()


def test_csv_format(tmp_path):
    rep = ConvergenceReport("lab", "temporal", [16, 32], [1 / 16, 1 / 32], [1e-3, 2.5e-4])
    rep.fit()
    path = tmp_path / "r.csv"
    rep.to_csv(path, {"config_hash": "abc"})
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash: abc"
    assert lines[1] == "# label: lab"
    assert lines[2] == "resolution,error,pairwise_order"
    r, e, o = lines[4].split(",")
    assert int(r) == 32 and float(e) == 2.5e-4 and float(o) == pytest.approx(2.0)
    assert lines[3].endswith(",")

    fig = ComparisonResult({"a": rep, "b": rep})
    fig.to_csv(tmp_path / "f.csv")
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "scheme,resolution,error,pairwise_order"
    assert len(rows) == 5
    assert "slope" in fig.table()


def test_temporal_study_exact_reference():
    system = scalar_linear_system()
    rep = temporal_convergence_study(system, [16, 32, 64], reference="exact",
                                     exact=lambda T: np.array([scalar_linear_exact(T)]))
    assert abs(rep.slope - 2.0) < 0.05
    assert rep.errors[0] == pytest.approx(abs(magros_run(system, TimeGrid(1.0, 16)).u[0]
                                              - scalar_linear_exact(1.0)))


def test_temporal_study_validation():
    system = scalar_linear_system()
    with pytest.raises(ValueError):
        temporal_convergence_study(system, [32, 16])
    with pytest.raises(ValueError):
        temporal_convergence_study(system, [16, 32], reference="fine_step", M_ref=32)
    with pytest.raises(ValueError):
        temporal_convergence_study(system, [16, 32], reference="exact")
    with pytest.raises(ValueError):
        temporal_convergence_study(system, [16, 32], reference="guess")


def test_temporal_study_records_bounds():
    system = adr_problem(nx=4).system()
    rep = temporal_convergence_study(system, [4, 8], M_ref=64)
    meta = rep.metadata
    assert meta["stability_R"] == pytest.approx(10 * meta["reference_norm"])
    assert len(meta["max_norms"]) == 2
    assert all(m <= meta["stability_R"] for m in meta["max_norms"])
    assert not rep.failures


def test_temporal_study_oracle_reference():
    system = adr_problem(nx=4).system()
    rep = temporal_convergence_study(system, [8, 16, 32], reference="oracle")
    assert rep.slope >= 1.8


def test_spatial_study_small():
    rep = spatial_convergence_study(heat_problem(), [4, 8, 16], M=64)
    assert rep.kind == "spatial"
    assert rep.steps[1] == pytest.approx(rep.steps[0] / 2)
    assert 1.7 <= rep.slope <= 2.3
    proj = spatial_convergence_study(heat_problem(), [4, 8, 16], control="projection")
    assert 1.8 <= proj.slope <= 2.2
    with pytest.raises(ValueError):
        spatial_convergence_study(adr_problem(nx=4), [4, 8])
