import math

import numpy as np
import pandas as pd
import pytest

from helmddm.core.errors import ConfigError, InvalidArgumentError
from helmddm.core.mesh import Mesh, generate_disk_mesh, write_msh
from helmddm.schemas import RunConfig
from helmddm.services.experiments import (
    DIAGNOSTICS_COLUMNS,
    HISTORY_COLUMNS,
    SWEEP_COLUMNS,
    run_diagnostics,
    run_direct,
    run_solve,
    run_sweep,
    sweep_config,
)
from helmddm.services.problem import build_problem, load_config_file, read_reference_file

TINY = RunConfig(kappa=2.0, n_lambda=8.0, num_subdomains=4, impedance="M")


def test_run_config_rejects_bad_values():
    with pytest.raises(ConfigError) as excinfo:
        RunConfig.from_mapping({"r": 1.5})
    assert "r" in excinfo.value.fields
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"kappa": 1.0, "n_lambda": 1.0})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"partition": "from-file"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"unknown_key": 1})


def test_config_file_loading(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('kappa = 3.0\nimpedance = "K"\nnum_subdomains = 2\n', encoding="utf-8")
    config = RunConfig.from_mapping(load_config_file(path))
    assert (config.kappa, config.impedance, config.num_subdomains) == (3.0, "K", 2)

    nested = tmp_path / "nested.toml"
    nested.write_text("[solver]\nr = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="flat"):
        load_config_file(nested)
    broken = tmp_path / "broken.toml"
    broken.write_text("kappa = = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="TOML"):
        load_config_file(broken)
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(tmp_path / "missing.toml")


def test_solve_writes_history(tmp_path):
    history = tmp_path / "history.csv"
    outcome = run_solve(TINY, history_path=history)
    report = outcome.report
    assert report.converged
    assert report.final_error <= TINY.tol
    assert report.num_subdomains == 4
    assert report.history[-1].iteration == report.iterations

    frame = pd.read_csv(history)
    assert list(frame.columns) == HISTORY_COLUMNS
    assert len(frame) == len(report.history)
    assert frame["relative_error"].iloc[-1] == pytest.approx(report.final_error, rel=1e-10)


def test_solve_reports_iteration_cap():
    report = run_solve(TINY.with_updates(solver="richardson", max_iter=2)).report
    assert not report.converged
    assert report.status == "max_iter"
    assert report.iterations == 2


def test_direct_writes_a_reusable_reference(tmp_path):
    path = tmp_path / "reference.bin"
    config = TINY.with_updates(restart=200)
    report = run_direct(config, reference_path=path)
    assert report.residual < 1e-12
    assert report.gmres_status == "converged"
    assert report.gmres_iterations > 0

    problem = build_problem(config)
    stored = read_reference_file(path, problem.mesh)
    assert stored.shape == (problem.mesh.num_nodes,)

    fresh = run_solve(config)
    reused = run_solve(config.with_updates(reference_file=path))
    assert reused.report.iterations == fresh.report.iterations
    np.testing.assert_array_equal(reused.reference, stored)


def test_reference_file_must_match_mesh(tmp_path):
    path = tmp_path / "reference.bin"
    run_direct(TINY, reference_path=path, baseline=False)
    other = build_problem(TINY.with_updates(n_lambda=16.0))
    assert other.mesh.num_nodes != build_problem(TINY).mesh.num_nodes
    with pytest.raises(ConfigError, match="reference"):
        read_reference_file(path, other.mesh)


def test_sweep_configs():
    assert sweep_config(TINY, "N_lambda", 12.0).n_lambda == 12.0
    kappa = sweep_config(TINY, "kappa", 4.0)
    assert kappa.n_lambda == pytest.approx(40.0)
    # h^2 kappa^3 stays fixed
    assert kappa.target_h**2 * 4.0**3 == pytest.approx((2 * math.pi / 20.0) ** 2)
    weak = sweep_config(TINY, "J", 16, weak_scaling=True)
    assert (weak.num_subdomains, weak.radius) == (16, pytest.approx(2.0))
    assert sweep_config(TINY, "J", 2).radius == 1.0
    with pytest.raises(InvalidArgumentError):
        sweep_config(TINY, "J", 2.5)


def test_sweep_rows_and_csv(tmp_path):
    path = tmp_path / "sweep.csv"
    rows = run_sweep(TINY, "N_lambda", [6.0, 8.0], impedances=["M", "Lambda"], output_path=path)
    assert [(row.value, row.impedance) for row in rows] == [(6.0, "M"), (6.0, "Lambda"), (8.0, "M"), (8.0, "Lambda")]
    assert all(row.converged for row in rows)
    assert all(row.no_ddm_iterations is None for row in rows)
    frame = pd.read_csv(path)
    assert list(frame.columns) == SWEEP_COLUMNS
    assert frame["iterations"].tolist() == [row.iterations for row in rows]


def test_diagnostics(tmp_path):
    path = tmp_path / "diagnostics.csv"
    report = run_diagnostics(TINY, ["M", "Lambda"], output_path=path)
    by_kind = {row.impedance: row for row in report.rows}
    assert by_kind["Lambda"].lambda_minus == pytest.approx(1.0, abs=1e-8)
    assert by_kind["Lambda"].lambda_plus == pytest.approx(1.0, abs=1e-8)
    for row in report.rows:
        assert 0.0 < row.gamma <= 2.0 + 1e-12
        assert 0.0 <= row.rate_bound < 1.0
        assert row.lambda_minus <= row.lambda_plus
    assert list(pd.read_csv(path).columns) == DIAGNOSTICS_COLUMNS
    assert report.csv == str(path)


def _two_region_mesh_file(tmp_path):
    disk = generate_disk_mesh(1.0, 0.25)
    regions = np.where(np.linalg.norm(disk.centroids, axis=1) <= 0.5, 1, 2)
    tagged = Mesh(
        nodes=disk.nodes, triangles=disk.triangles, boundary_edges=disk.boundary_edges, element_region=regions
    )
    path = tmp_path / "regions.msh"
    path.write_text(write_msh(tagged), encoding="utf-8")
    return path, regions


def test_region_tags_set_the_medium(tmp_path):
    path, regions = _two_region_mesh_file(tmp_path)
    config = TINY.with_updates(mesh_file=path, region_mu={1: 5.0, 2: 1.0})
    problem = build_problem(config)
    np.testing.assert_array_equal(problem.material.mu, np.where(regions == 1, 5.0, 1.0))
    assert run_solve(config, problem=problem).report.converged

    with pytest.raises(ConfigError) as excinfo:
        build_problem(config.with_updates(region_mu={1: 5.0}))
    assert excinfo.value.fields == ("region_mu",)
    with pytest.raises(ConfigError):
        TINY.with_updates(mesh_file=path, region_mu={1: 5.0, 2: 1.0}, mu_r=2.0)
    with pytest.raises(ConfigError):
        TINY.with_updates(region_mu={1: -1.0})


def test_region_mu_from_config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("kappa = 2.0\nregion_mu = { 1 = 5.0, 2 = 1.0 }\n", encoding="utf-8")
    config = RunConfig.from_mapping(load_config_file(path))
    assert config.region_mu == {1: 5.0, 2: 1.0}


def test_outputs_are_byte_identical_across_runs(tmp_path):
    paths = []
    for name in ("first", "second"):
        sweep = tmp_path / f"{name}_sweep.csv"
        history = tmp_path / f"{name}_history.csv"
        run_sweep(TINY, "J", [2, 4], impedances=["M", "W"], output_path=sweep)
        run_solve(TINY.with_updates(impedance="Lambda"), history_path=history)
        paths.append((sweep, history))
    for first, second in zip(*paths):
        assert first.read_bytes() == second.read_bytes()


def _counts(rows, kind):
    return [row.iterations for row in rows if row.impedance == kind]


@pytest.mark.slow
def test_schur_impedance_count_is_flat_under_refinement():
    base = RunConfig(kappa=1.0, num_subdomains=4)
    rows = run_sweep(base, "N_lambda", [10.0, 20.0, 40.0], impedances=["M", "Lambda"])
    assert all(row.converged for row in rows)
    schur, despres = _counts(rows, "Lambda"), _counts(rows, "M")
    assert max(schur) < 1.25 * min(schur)
    assert despres[2] >= 1.5 * despres[0]


@pytest.mark.slow
def test_contrast_only_mildly_increases_counts():
    base = RunConfig(kappa=10.0, n_lambda=25.0, num_subdomains=10)
    rows = run_sweep(base, "mu_r", [0.0, 4.0], impedances=["M", "Lambda"], baseline=True)
    assert all(row.converged for row in rows)
    for kind in ("M", "Lambda"):
        homogeneous, contrasted = _counts(rows, kind)
        assert contrasted < 3 * homogeneous
    assert all(row.no_ddm_iterations and row.no_ddm_iterations > 0 for row in rows)
