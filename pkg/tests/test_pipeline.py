"""
Integration Tests for the Scenario Pipeline

Small scenarios are run end to end into temporary directories:
- free flow and a smooth kernel must pass their W1 bounds
- poisson mode must complete and keep Q(t) above E(t)
- invalid scenarios are refused before anything is written
"""

import filecmp
import importlib
import json
import os
import sys

import numpy as np
import pytest

from kwass import pipeline
from kwass.exceptions import ConfigError, NumericalError
from kwass.models import SimMode, Verdict
from kwass.pipeline import (
    W1_COLUMN,
    W2_COLUMN,
    build_initial_pair,
    list_scenarios,
    load_scenario,
    read_distances,
    required_distances,
    run_scenario,
    validate_config,
)

RUN_FILES = [
    "trajectory.csv", "distances.csv", "bounds.csv", "q_series.csv",
    "report.csv", "verdict.txt", "plot.gp", "manifest.json",
]

FREE_SCENARIO = """
name = "free_small"
description = "free flow, 50 particles"

[sim]
mode = "free"
N = 50
dt = 0.1
t_end = 1.0
snap_every = 5
seed = 4

[pair]
kind = "velocity_shift"
delta = 1e-3

[[distances]]
variant = "plain"
p = 1.0

[[bounds]]
kind = "combined"
B = 0.0

[[bounds]]
kind = "dobrushin"
B = 0.0
"""

KERNEL_SCENARIO = """
name = "kernel_small"

[sim]
mode = "kernel"
N = 100
dt = 0.01
t_end = 0.5
snap_every = 10
seed = 1

[sim.kernel]
name = "single_mode"
B = 1.0

[initial]
alpha = 0.3
v_std = 0.5

[pair]
kind = "velocity_shift"
delta = 1e-3

[[bounds]]
kind = "combined"
"""

POISSON_SCENARIO = """
name = "poisson_small"

[sim]
mode = "poisson"
N = 200
dt = 0.01
t_end = 0.2
eps = 1.0
grid = 16
snap_every = 5
seed = 2

[initial]
alpha = 0.1
v_std = 0.5

[pair]
kind = "velocity_shift"
delta = 1e-6

[[distances]]
p = 2.0

[[bounds]]
kind = "loeper_improved"

[[bounds]]
kind = "R_of_t"
"""


# ============================================================================
# TEST SUITE 1: Loading and validation
# ============================================================================

class TestScenarioLoading:
    """Test cases for scenario files."""

    def test_bundled_scenarios_listed(self):
        """Test that the three bundled scenarios load and are listed by name."""
        names = [info.name for info in list_scenarios()]
        assert names == ["free_flow", "smooth_kernel", "vp_eps"]

    def test_bundled_scenario_by_name(self):
        """Test that a bundled scenario resolves without its path."""
        scn = load_scenario("vp_eps")
        assert scn.sim.mode == SimMode.POISSON
        assert scn.sweep.eps == [1.0, 0.5]

    def test_bundled_scenarios_validate(self):
        """Test that every bundled scenario passes the cross-field checks."""
        for info in list_scenarios():
            assert validate_config(info.path).ok

    def test_negative_dt_names_field(self, scenario_file):
        """Test that sim.dt = -1 is reported with its dotted path."""
        path = scenario_file('name = "bad"\n[sim]\ndt = -1.0\n')
        with pytest.raises(ConfigError) as exc_info:
            load_scenario(path)
        assert "sim.dt" in exc_info.value.detail

    def test_unknown_key_rejected(self, scenario_file):
        """Test that a misspelled key is an error, not silently ignored."""
        path = scenario_file('name = "bad"\n[sim]\nsteps = 10\n')
        diag = validate_config(path)
        assert not diag.ok
        assert any("sim.steps" in e for e in diag.errors)

    def test_toml_syntax_error(self, scenario_file):
        """Test that a broken file is a config error."""
        with pytest.raises(ConfigError):
            load_scenario(scenario_file("name = \n"))

    def test_missing_file(self, tmp_path):
        """Test that a path that is neither a file nor a bundled name is refused."""
        with pytest.raises(ConfigError):
            load_scenario(str(tmp_path / "absent.toml"))

    def test_tomli_used_without_tomllib(self, scenario_file, monkeypatch):
        """Test that scenario files still load through the tomli backport when tomllib is absent."""
        toml = pipeline.tomllib
        path = scenario_file(FREE_SCENARIO)
        monkeypatch.setitem(sys.modules, "tomllib", None)
        monkeypatch.setitem(sys.modules, "tomli", toml)
        try:
            importlib.reload(pipeline)
            assert pipeline.tomllib is toml
            assert pipeline.load_scenario(path).sim.N == 50
        finally:
            monkeypatch.undo()
            importlib.reload(pipeline)

    def test_poisson_bound_needs_poisson_mode(self, scenario_file):
        """Test that R_of_t in free mode fails the cross-field checks."""
        diag = validate_config(scenario_file('name = "bad"\n[[bounds]]\nkind = "R_of_t"\n'))
        assert not diag.ok
        assert diag.errors[0].startswith("bounds.0.kind")

    def test_required_distances_added(self):
        """Test that W1 and W2 bounds pull in the plain distances they are checked against."""
        scn = load_scenario("vp_eps")
        columns = [d.column for d in required_distances(scn)]
        assert W2_COLUMN in columns
        assert W1_COLUMN not in columns

    def test_initial_pair_is_shifted(self, scenario_file):
        """Test that the velocity-shift pair shares positions and differs by delta in velocity."""
        mu, nu = build_initial_pair(load_scenario(scenario_file(FREE_SCENARIO)))
        np.testing.assert_array_equal(mu.x, nu.x)
        np.testing.assert_allclose(nu.v - mu.v, 1e-3, rtol=1e-9)


# ============================================================================
# TEST SUITE 2: End-to-end runs
# ============================================================================

@pytest.mark.integration
class TestRunScenario:
    """Test cases for run_scenario."""

    def test_free_flow_passes(self, scenario_file, tmp_path):
        """Test that free flow passes and writes every artifact."""
        out = tmp_path / "run"
        result = run_scenario(scenario_file(FREE_SCENARIO), out_dir=str(out))

        assert result.verdict == Verdict.PASS
        assert result.exit_code == 0
        for name in RUN_FILES:
            assert (out / name).is_file(), name
        assert result.checks["combined:W1_plain"]
        assert result.checks["Q_w1:telescoping"]
        assert "verdict: pass" in (out / "verdict.txt").read_text()

    def test_manifest_hashes_outputs(self, scenario_file, tmp_path):
        """Test that the manifest records the scenario, seeds and a hash per artifact."""
        out = tmp_path / "run"
        run_scenario(scenario_file(FREE_SCENARIO), out_dir=str(out))
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scenario"]["name"] == "free_small"
        assert manifest["seeds"] == {"sim": 4, "pair": 5}
        assert manifest["verdict"] == "pass"
        assert set(manifest["files"]) == set(RUN_FILES) - {"manifest.json"}

    def test_rerun_is_byte_identical(self, scenario_file, tmp_path):
        """Test that the same scenario and seed reproduce every file byte for byte."""
        path = scenario_file(FREE_SCENARIO)
        run_scenario(path, out_dir=str(tmp_path / "a"))
        run_scenario(path, out_dir=str(tmp_path / "b"))
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", RUN_FILES, shallow=False)
        assert mismatch == [] and errors == []

    def test_seed_override(self, scenario_file, tmp_path):
        """Test that a seed override changes the draw and is recorded."""
        out = tmp_path / "run"
        run_scenario(scenario_file(FREE_SCENARIO), out_dir=str(out), seed=11)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"]["sim"] == 11

    def test_distances_start_at_shift(self, scenario_file, tmp_path):
        """Test that W1 between velocity-shifted ensembles is delta at t = 0."""
        out = tmp_path / "run"
        run_scenario(scenario_file(FREE_SCENARIO), out_dir=str(out))
        times, distances = read_distances(str(out / "distances.csv"))
        np.testing.assert_allclose(times, [0.0, 0.5, 1.0])
        assert distances[W1_COLUMN][0] == pytest.approx(1e-3, rel=1e-9)

    def test_kernel_mode_passes(self, scenario_file, tmp_path):
        """Test that a smooth kernel stays below the combined bound taken from its Hessian."""
        result = run_scenario(scenario_file(KERNEL_SCENARIO), out_dir=str(tmp_path / "run"))
        assert result.verdict == Verdict.PASS

    def test_weak_kernel_passes_with_longer_horizon(self, scenario_file, tmp_path):
        """Test B = 0.1 up to t = 2 against the combined bound, including its improved branch."""
        body = KERNEL_SCENARIO.replace("B = 1.0", "B = 0.1").replace("t_end = 0.5", "t_end = 2.0")
        result = run_scenario(scenario_file(body), out_dir=str(tmp_path / "run"))
        assert result.verdict == Verdict.PASS

    @pytest.mark.slow
    def test_poisson_mode_completes(self, scenario_file, tmp_path):
        """Test that poisson mode writes its Q series and keeps Q >= E."""
        out = tmp_path / "run"
        result = run_scenario(scenario_file(POISSON_SCENARIO), out_dir=str(out))
        assert result.checks["Q>=E"]
        assert (out / "q_series.csv").is_file()
        header = (out / "q_series.csv").read_text().splitlines()[0]
        assert header.startswith("t,D,E,Q")

    def test_sweep_runs_each_eps(self, scenario_file, tmp_path):
        """Test that a sweep writes one subdirectory per eps and joins the verdicts."""
        body = FREE_SCENARIO + "\n[sweep]\neps = [1.0, 0.5]\n"
        out = tmp_path / "run"
        result = run_scenario(scenario_file(body), out_dir=str(out))
        assert len(result.children) == 2
        assert (out / "eps_1" / "verdict.txt").is_file()
        assert (out / "eps_0.5" / "verdict.txt").is_file()
        assert result.checks == {"eps=1": True, "eps=0.5": True}


class TestRunFailures:
    """Test cases for refused runs."""

    def test_invalid_scenario_writes_nothing(self, scenario_file, tmp_path):
        """Test that a config error is raised before the output directory exists."""
        out = tmp_path / "run"
        with pytest.raises(ConfigError):
            run_scenario(scenario_file('name = "bad"\n[sim]\ndt = -1.0\n'), out_dir=str(out))
        assert not out.exists()

    def test_cross_field_error_writes_nothing(self, scenario_file, tmp_path):
        """Test that R_of_t in free mode is refused without output."""
        out = tmp_path / "run"
        with pytest.raises(ConfigError) as exc_info:
            run_scenario(scenario_file('name = "bad"\n[[bounds]]\nkind = "R_of_t"\n'), out_dir=str(out))
        assert "R_of_t" in exc_info.value.detail
        assert not os.path.exists(out)

    @pytest.fixture
    def second_measure_fails(self, monkeypatch):
        """Let the first sweep run through and fail the second one while measuring."""
        real = pipeline.measure_stage
        calls = []

        def measure(scn, traj):
            calls.append(scn.sim.eps)
            if len(calls) > 1:
                raise NumericalError("entropic plan overflowed; increase eta")
            return real(scn, traj)

        monkeypatch.setattr(pipeline, "measure_stage", measure)
        return calls

    @pytest.mark.integration
    def test_failed_sweep_removes_earlier_runs(self, scenario_file, tmp_path, second_measure_fails):
        """Test that a failure in the second eps removes eps_1/ and the new sweep directory."""
        body = FREE_SCENARIO + "\n[sweep]\neps = [1.0, 0.5]\n"
        out = tmp_path / "run"
        with pytest.raises(NumericalError):
            run_scenario(scenario_file(body), out_dir=str(out))
        assert second_measure_fails == [1.0, 0.5]
        assert not out.exists()

    @pytest.mark.integration
    def test_failed_sweep_keeps_existing_directory(self, scenario_file, tmp_path, second_measure_fails):
        """Test that a sweep into an existing directory removes only its own subdirectories."""
        body = FREE_SCENARIO + "\n[sweep]\neps = [1.0, 0.5]\n"
        out = tmp_path / "run"
        out.mkdir()
        (out / "notes.txt").write_text("keep")
        with pytest.raises(NumericalError):
            run_scenario(scenario_file(body), out_dir=str(out))
        assert sorted(os.listdir(out)) == ["notes.txt"]
