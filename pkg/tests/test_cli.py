"""Command-line layer: config validation, overrides, writers, exit codes."""
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from incplast import cli
from incplast.cli import (
    ConfigError,
    build_scenario,
    check_causality,
    check_constitutive_gradients,
    check_frame_indifference,
    check_metric_properties,
    check_segment_convexity,
    load_config,
    main,
)
from incplast.material import MaterialParams

REPO_ROOT = Path(__file__).resolve().parents[1]
BUNDLED = REPO_ROOT / "shear_ramp.cfg"

TINY = """
[grid]
cells_x = 2
cells_y = 2
cells_z = 2

[time]
horizon_time = 0.1
step_time = 0.05

[loading]
kind = "shear_ramp"
traction_rate_force_per_area_time = 0.8

[mollifier]
radius_cells = 1

[solver]
competitor_samples = 4
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def write_cfg(tmp_path, extra: str, name: str = "case.cfg") -> Path:
    path = tmp_path / name
    path.write_text(TINY + extra)
    return path


# ---------------------------------------------------------------------------
# config parsing and validation
# ---------------------------------------------------------------------------

def test_defaults_fill_unlisted_fields(tiny_cfg):
    scenario = build_scenario(load_config(tiny_cfg))
    assert scenario.params.alpha == 1.0
    assert scenario.params.flow.r_0 == pytest.approx(0.1)
    assert scenario.params.mu_gradient == pytest.approx(0.1)
    assert scenario.seed == 1234
    assert scenario.nsteps == 2
    assert scenario.tau == pytest.approx(0.05)
    assert scenario.policy.competitor_samples == 4


def test_unknown_field_named_in_error(tmp_path):
    path = write_cfg(tmp_path, "\n[material]\nshear_modulus = 2.0\n")
    with pytest.raises(ConfigError, match="material.shear_modulus"):
        build_scenario(load_config(path))


def test_unknown_section_rejected(tmp_path):
    path = write_cfg(tmp_path, "\n[plasticity]\nr = 1.0\n")
    with pytest.raises(ConfigError, match="plasticity"):
        build_scenario(load_config(path))


def test_wrong_type_rejected(tmp_path):
    path = write_cfg(tmp_path, "\n[run]\nseed = 1.5\n")
    with pytest.raises(ConfigError, match="run.seed"):
        build_scenario(load_config(path))
    path = write_cfg(tmp_path, "\n[run]\ndump_fields = 1\n", name="b.cfg")
    with pytest.raises(ConfigError, match="run.dump_fields"):
        build_scenario(load_config(path))


def test_missing_required_field_rejected(tmp_path):
    path = tmp_path / "norequired.cfg"
    path.write_text("[grid]\ncells_x = 2\ncells_y = 2\n")
    with pytest.raises(ConfigError, match="grid.cells_z"):
        build_scenario(load_config(path))


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")
    path = tmp_path / "broken.cfg"
    path.write_text("[grid\ncells_x = 2\n")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(path)


def test_invalid_flow_constants_rejected(tmp_path):
    path = write_cfg(tmp_path, "\n[flow]\ngap_slope = 0.4\n")
    with pytest.raises(ConfigError, match="flow"):
        build_scenario(load_config(path))
    path = write_cfg(tmp_path, "\n[flow]\nyield_radius = 0.3\nyield_radius_cap = 0.2\n",
                     name="cap.cfg")
    with pytest.raises(ConfigError, match="flow"):
        build_scenario(load_config(path))


def test_step_must_divide_horizon(tiny_cfg):
    with pytest.raises(ConfigError, match="time.step_time"):
        build_scenario(load_config(tiny_cfg), tau=0.03)
    with pytest.raises(ConfigError, match="time.step_time"):
        build_scenario(load_config(tiny_cfg), nsteps=0)


def test_stencil_too_wide_for_grid(tmp_path):
    path = tmp_path / "wide.cfg"
    path.write_text(
        "[grid]\ncells_x = 1\ncells_y = 1\ncells_z = 1\n"
        "[time]\nhorizon_time = 0.1\nstep_time = 0.05\n"
        "[mollifier]\nradius_cells = 2\n"
    )
    with pytest.raises(ConfigError, match="mollifier.radius_cells"):
        build_scenario(load_config(path))


def test_unknown_loading_kind_rejected(tmp_path):
    path = write_cfg(tmp_path, "\n# override below\n")
    text = path.read_text().replace('kind = "shear_ramp"', 'kind = "torsion"')
    path.write_text(text)
    with pytest.raises(ConfigError, match="loading.kind"):
        build_scenario(load_config(path))


def test_overrides_change_scenario(tiny_cfg):
    config = load_config(tiny_cfg)
    scenario = build_scenario(config, nsteps=4, seed=7, out="elsewhere",
                              dump_fields=True)
    assert scenario.nsteps == 4
    assert scenario.tau == pytest.approx(0.025)
    assert scenario.seed == 7
    assert scenario.output_dir == Path("elsewhere")
    assert scenario.dump_fields is True
    halved = build_scenario(config, tau=0.025)
    assert halved.nsteps == 4


def test_bundled_config_parses():
    scenario = build_scenario(load_config(BUNDLED))
    assert scenario.grid.cells == (4, 4, 4)
    assert scenario.nsteps == 20
    assert scenario.horizon == pytest.approx(1.0)
    assert scenario.seed == 1234


# ---------------------------------------------------------------------------
# property checks exposed by `check`
# ---------------------------------------------------------------------------

def test_check_functions_pass_on_defaults():
    params = MaterialParams()
    assert check_metric_properties(params, n_pairs=8, seed=3).passed
    assert check_constitutive_gradients(params, n_states=10, seed=3).passed
    assert check_frame_indifference(params, n_samples=15, seed=3).passed
    assert check_segment_convexity(params, n_samples=20, seed=3).passed
    assert check_causality(seed=3).passed


# ---------------------------------------------------------------------------
# commands end to end (in-process through main)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def run_outputs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli_run")
    cfg = base / "tiny.cfg"
    cfg.write_text(TINY)
    out = base / "out"
    code = main(["run", str(cfg), "--out", str(out), "--dump-fields"])
    return code, cfg, out


def test_run_exit_code_and_files(run_outputs):
    code, _cfg, out = run_outputs
    assert code == 0
    assert (out / "trajectory.csv").is_file()
    assert (out / "report.csv").is_file()
    assert (out / "fields_nodes.csv").is_file()
    assert (out / "fields_cells.csv").is_file()


def test_trajectory_csv_shape(run_outputs):
    _code, _cfg, out = run_outputs
    lines = (out / "trajectory.csv").read_text().strip().split("\n")
    assert lines[0] == cli.TRAJECTORY_COLUMNS
    assert len(lines) == 1 + 2  # header + one row per step
    first = lines[1].split(",")
    assert first[0] == "1"
    assert float(first[1]) == pytest.approx(0.05)
    assert first[8] in ("true", "false")
    cum = 0.0
    for row in lines[1:]:
        cells = row.split(",")
        cum += float(cells[4])
        assert float(cells[5]) == pytest.approx(cum, abs=1e-15)


def test_report_csv_shape(run_outputs):
    _code, _cfg, out = run_outputs
    lines = (out / "report.csv").read_text().strip().split("\n")
    assert lines[0] == cli.REPORT_COLUMNS
    names = [row.split(",")[0] for row in lines[1:]]
    assert "dissipativity" in names
    assert "coercivity" in names
    assert "gronwall" in names
    assert all(row.split(",")[1] == "true" for row in lines[1:])


def test_fields_csv_shape(run_outputs):
    _code, _cfg, out = run_outputs
    nodes = (out / "fields_nodes.csv").read_text().strip().split("\n")
    assert nodes[0] == cli.NODE_FIELD_COLUMNS
    assert len(nodes) == 1 + 27
    origin = nodes[1].split(",")
    assert [float(v) for v in origin[1:4]] == [0.0, 0.0, 0.0]
    assert [float(v) for v in origin[4:7]] == [0.0, 0.0, 0.0]  # clamped
    cells = (out / "fields_cells.csv").read_text().strip().split("\n")
    assert cells[0] == cli.CELL_FIELD_COLUMNS
    assert len(cells) == 1 + 8
    p0 = np.array([float(v) for v in cells[1].split(",")[4:]]).reshape(3, 3)
    assert abs(np.linalg.det(p0) - 1.0) <= 1e-9


def test_tau_halving_doubles_rows(run_outputs, tmp_path):
    _code, cfg, out = run_outputs
    halved = tmp_path / "halved"
    assert main(["run", str(cfg), "--tau", "0.025", "--out", str(halved)]) == 0
    base_rows = len((out / "trajectory.csv").read_text().strip().split("\n")) - 1
    new_rows = len((halved / "trajectory.csv").read_text().strip().split("\n")) - 1
    assert new_rows == 2 * base_rows


def test_rerun_is_byte_identical(run_outputs, tmp_path):
    _code, cfg, out = run_outputs
    again = tmp_path / "again"
    assert main(["run", str(cfg), "--out", str(again), "--dump-fields"]) == 0
    for name in ("trajectory.csv", "report.csv", "fields_nodes.csv",
                 "fields_cells.csv"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_malformed_config_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, "\n[flow]\ngap_slope = 0.4\n")
    assert main(["run", str(path)]) == 2
    err = capsys.readouterr().err
    assert "flow" in err


def test_check_command(tiny_cfg, capsys):
    assert main(["check", str(tiny_cfg)]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 5
    assert all("PASS" in line for line in lines)


def test_linearize_command(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "lin"
    assert main(["linearize", str(tiny_cfg), "--eps", "0.1", "0.03", "0.01",
                 "--out", str(out)]) == 0
    table = (out / "linearization.csv").read_text().strip().split("\n")
    assert table[0] == cli.LINEARIZATION_COLUMNS
    assert len(table) == 1 + 3 + 1
    assert table[-1].startswith("slope,")
    slopes = [float(v) for v in table[-1].split(",")[1:]]
    assert all(s >= 0.9 for s in slopes)


def test_linearize_single_epsilon_no_slope(tiny_cfg, tmp_path):
    out = tmp_path / "lin1"
    assert main(["linearize", str(tiny_cfg), "--eps", "0.01",
                 "--out", str(out)]) == 0
    table = (out / "linearization.csv").read_text().strip().split("\n")
    assert len(table) == 2
    assert not table[-1].startswith("slope,")


def test_linearize_rejects_nonpositive_epsilon(tiny_cfg, tmp_path):
    assert main(["linearize", str(tiny_cfg), "--eps", "0.0",
                 "--out", str(tmp_path / "z")]) == 2


def test_report_command(tiny_cfg, tmp_path):
    out = tmp_path / "rep"
    assert main(["report", str(tiny_cfg), "--out", str(out)]) == 0
    assert (out / "report.csv").is_file()
    assert not (out / "trajectory.csv").exists()


def test_vtk_dump(tmp_path):
    cfg = write_cfg(tmp_path, "\n[run]\nlegacy_vtk = true\n")
    out = tmp_path / "vtk_out"
    assert main(["run", str(cfg), "--out", str(out), "--dump-fields"]) == 0
    text = (out / "fields.vtk").read_text()
    lines = text.split("\n")
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET STRUCTURED_POINTS" in text
    assert "DIMENSIONS 3 3 3" in text
    assert "VECTORS deformation double" in text
    assert "TENSORS plastic double" in text
    # x-fastest point order: entry after the clamped origin is the node at
    # (0.5, 0, 0), whose deformation differs from the origin's.
    vec_start = lines.index("VECTORS deformation double") + 1
    origin = [float(v) for v in lines[vec_start].split()]
    assert origin == [0.0, 0.0, 0.0]
    second = [float(v) for v in lines[vec_start + 1].split()]
    assert second != origin


def test_console_entry_point(tiny_cfg):
    proc = subprocess.run(
        [sys.executable, "-m", "incplast.cli", "check", str(tiny_cfg)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "metric_properties: PASS" in proc.stdout
