import pandas as pd
import pytest

from helmddm.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, exit_code_for, main
from helmddm.core.errors import ConfigError, ConvergenceError, MeshParseError
from helmddm.core.logging import setup_logging
from helmddm.core.mesh import read_msh, read_partition_file
from helmddm.services.experiments import HISTORY_COLUMNS

TINY = ["--kappa", "2", "--n-lambda", "8", "--subdomains", "4"]


def _header_nodes(path):
    return int.from_bytes(path.read_bytes()[:8], "little")


@pytest.fixture(autouse=True)
def _rebind_logging(test_settings):
    # main() binds the console handler to the captured stderr of the test
    yield
    setup_logging(test_settings)


def test_mesh_and_partition_commands(tmp_path, capsys):
    mesh_path = tmp_path / "disk.msh"
    assert main(["mesh", *TINY, "-o", str(mesh_path)]) == EXIT_OK
    mesh = read_msh(mesh_path.read_text(encoding="utf-8"))
    assert f"{mesh.num_nodes} nodes" in capsys.readouterr().out

    owner_path = tmp_path / "owners.txt"
    assert main(["partition", *TINY, "--mesh-file", str(mesh_path), "-o", str(owner_path)]) == EXIT_OK
    partition = read_partition_file(owner_path.read_text(encoding="utf-8"), mesh.num_triangles)
    assert partition.num_subdomains == 4
    assert "J=4" in capsys.readouterr().out

    history = tmp_path / "history.csv"
    args = ["solve", *TINY, "--mesh-file", str(mesh_path), "--partition", "from-file"]
    assert main([*args, "--partition-file", str(owner_path), "-o", str(history)]) == EXIT_OK
    assert list(pd.read_csv(history).columns) == HISTORY_COLUMNS


def test_solve_uses_config_file_and_flag_overrides(tmp_path, capsys):
    config = tmp_path / "run.toml"
    config.write_text('kappa = 2.0\nn_lambda = 8.0\nimpedance = "K"\nsolver = "richardson"\n', encoding="utf-8")
    code = main(["solve", "--config", str(config), "--solver", "gmres", "-o", str(tmp_path / "h.csv")])
    assert code == EXIT_OK
    assert "K/gmres converged" in capsys.readouterr().out


def test_solve_defaults_to_output_directory(test_settings, capsys):
    assert main(["solve", *TINY, "--impedance", "Lambda"]) == EXIT_OK
    assert test_settings.output_path("history_Lambda_gmres.csv").exists()


def test_iteration_cap_exit_code(tmp_path):
    code = main(["solve", *TINY, "--solver", "richardson", "--max-iter", "2", "-o", str(tmp_path / "h.csv")])
    assert code == EXIT_NOT_CONVERGED


def test_invalid_configuration_exit_code(capsys):
    assert main(["solve", *TINY, "--r", "1.5"]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_missing_mesh_file_is_a_config_error(tmp_path):
    assert main(["mesh", "--mesh-file", str(tmp_path / "nowhere.msh")]) == EXIT_CONFIG


def test_direct_and_diagnostics_commands(tmp_path, capsys):
    reference = tmp_path / "reference.bin"
    assert main(["direct", *TINY, "--no-baseline", "-o", str(reference)]) == EXIT_OK
    assert reference.stat().st_size == 16 + 16 * _header_nodes(reference)
    out = tmp_path / "diag.csv"
    assert main(["diagnostics", *TINY, "--impedances", "M", "W", "-o", str(out)]) == EXIT_OK
    assert pd.read_csv(out)["impedance"].tolist() == ["M", "W"]
    assert "gamma=" in capsys.readouterr().out


def test_sweep_command(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", *TINY, "--axis", "J", "--values", "1", "2", "--impedances", "Lambda", "-o", str(out)])
    assert code == EXIT_OK
    assert pd.read_csv(out)["value"].tolist() == [1.0, 2.0]


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_exit_codes_follow_causes():
    assert exit_code_for(ConfigError("bad")) == EXIT_CONFIG
    assert exit_code_for(MeshParseError("bad")) == EXIT_ERROR
    try:
        try:
            raise ConfigError("inner")
        except ConfigError as exc:
            raise ConvergenceError("member failed") from exc
    except ConvergenceError as wrapped:
        assert exit_code_for(wrapped) == EXIT_CONFIG


def test_region_mu_flags(tmp_path):
    mesh_path = tmp_path / "disk.msh"
    assert main(["mesh", *TINY, "-o", str(mesh_path)]) == EXIT_OK
    args = ["solve", *TINY, "--mesh-file", str(mesh_path), "-o", str(tmp_path / "h.csv")]
    assert main([*args, "--region-mu", "0=3.0"]) == EXIT_OK
    assert main([*args, "--region-mu", "7=3.0"]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main([*args, "--region-mu", "0:3.0"])
