import json
import tempfile
from pathlib import Path
from unittest.mock import patch

from click.testing import CliRunner

from steklab.cli import cli
from steklab.errors import OutOfRegimeError


class TestCLI:
    """Test the command-line interface."""

    def setup_method(self):
        """Set up test fixtures."""
        self.runner = CliRunner()
        self.temp_dir = tempfile.TemporaryDirectory()
        self.home = Path(self.temp_dir.name)
        self.home_patch = patch("pathlib.Path.home", return_value=self.home)
        self.home_patch.start()

    def teardown_method(self):
        self.home_patch.stop()
        self.temp_dir.cleanup()

    def test_cli_version(self):
        """Test version flag."""
        result = self.runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert "steklab version" in result.output

    def test_cli_help(self):
        """Test help output lists the experiment kinds."""
        result = self.runner.invoke(cli, ["sweep", "--help"])
        assert result.exit_code == 0
        assert "planar_sweep" in result.output
        assert "--workers" in result.output

        result = self.runner.invoke(cli, [])
        assert result.exit_code == 0
        assert "EXIT CODES" in result.output

    def test_cylinder_closed_form(self):
        """Cross spectrum (0, pi^2) with L = 1 needs --exhaustive for the fourth value."""
        out = self.home / "closed.json"
        result = self.runner.invoke(
            cli, ["cylinder", "--cross-spectrum", "0,9.869604401089358", "--exhaustive", "-k", "4", "-o", str(out)]
        )
        assert result.exit_code == 0
        assert "sigma_4" in result.output
        data = json.loads(out.read_text())
        assert data[0]["domain_id"] == "cylinder-closed-form"
        assert len(data[0]["steklov"]["raw"]) == 4
        assert data[0]["steklov"]["raw"][1] == 1.0

        result = self.runner.invoke(cli, ["cylinder", "--cross-spectrum", "0,9.869604401089358", "-k", "4"])
        assert result.exit_code == 2
        assert "truncation" in result.output

    def test_cylinder_closed_form_honours_format(self):
        """The closed-form branch writes CSV like every other command."""
        result = self.runner.invoke(
            cli, ["cylinder", "--cross-spectrum", "0,9.869604401089358", "--exhaustive", "-k", "2", "-f", "csv"]
        )
        assert result.exit_code == 0
        assert "domain_id,k,sigma_raw" in result.output
        assert "cylinder-closed-form,2,1.0" in result.output

        runs = json.loads((self.home / ".steklab" / "runs.json").read_text())
        assert runs[-1]["command"] == "cylinder"
        assert runs[-1]["config"]["exhaustive"] is True

    def test_single_eigenvalue_runs(self):
        """k = 1 leaves only the zero mode; comparisons against it must not divide by zero."""
        result = self.runner.invoke(cli, ["cylinder", "-r", "1", "-k", "1", "-o", str(self.home / "cyl.json")])
        assert result.exit_code == 0
        assert result.exception is None or isinstance(result.exception, SystemExit)

        result = self.runner.invoke(
            cli, ["sweep", "conformal_experiment", "-r", "1", "-k", "1", "-o", str(self.home / "conf.json")]
        )
        assert result.exit_code in (0, 1)
        assert result.exception is None or isinstance(result.exception, SystemExit)

    def test_sweep_large_sigma_to_file(self):
        """Reports go to --out; the summary and history record the run."""
        out = self.home / "large.json"
        result = self.runner.invoke(cli, ["sweep", "large_sigma", "-o", str(out)])

        assert result.exit_code == 0
        assert "Report written to" in result.output
        data = json.loads(out.read_text())
        assert [entry["domain_id"] for entry in data][:2] == ["large-sigma-00", "large-sigma-01"]

        runs = json.loads((self.home / ".steklab" / "runs.json").read_text())
        assert runs[-1]["command"] == "sweep:large_sigma"
        assert runs[-1]["exit_code"] == 0
        assert runs[-1]["report_path"] == str(out)

    def test_sweep_requires_kind_or_config(self):
        """Test sweep without a kind or a config file."""
        result = self.runner.invoke(cli, ["sweep"])
        assert result.exit_code == 2
        assert "Specify an experiment KIND" in result.output

    def test_sweep_from_config_file(self):
        """Config files supply the experiment; flags override their values."""
        config_path = self.home / "experiment.json"
        config_path.write_text(json.dumps({"experiment": "large_sigma", "lambda2_values": [4.0, 9.0]}))
        out = self.home / "table.csv"

        result = self.runner.invoke(cli, ["sweep", "-c", str(config_path), "-f", "csv", "-o", str(out)])

        assert result.exit_code == 0
        rows = out.read_text().splitlines()
        assert rows[0].startswith("domain_id,k,sigma_raw")
        assert len(rows) == 1 + 2 * 2

    def test_invalid_config_exits_2(self):
        """Test an invalid config file exits 2."""
        config_path = self.home / "experiment.json"
        config_path.write_text(json.dumps({"experiment": "large_sigma", "k": -1}))

        result = self.runner.invoke(cli, ["sweep", "-c", str(config_path)])
        assert result.exit_code == 2
        assert "'k' must be a positive integer" in result.output

    def test_domain_error_exits_2(self):
        """A failing domain becomes an error record and exit code 2."""
        result = self.runner.invoke(cli, ["solve", "--domain", "annulus", "--r-in", "2.0", "-r", "1"])
        assert result.exit_code == 2
        assert "invalid-spec" in result.output

    @patch("steklab.cli.run_experiment")
    def test_execution_error_exits_2(self, mock_run):
        """Test an experiment error exits 2."""
        mock_run.side_effect = OutOfRegimeError("lambda2 too small")

        result = self.runner.invoke(cli, ["sweep", "large_sigma"])
        assert result.exit_code == 2
        assert "out-of-regime" in result.output

    def test_solve_and_verify(self):
        """A disk report passes the planar suite and can be re-verified."""
        out = self.home / "disk.json"
        result = self.runner.invoke(
            cli, ["solve", "--domain", "unit_disk", "-r", "2", "-k", "4", "--suite", "planar", "--tol-override", "0.1", "-o", str(out)]
        )
        assert result.exit_code == 0
        data = json.loads(out.read_text())
        assert data[0]["domain_id"] == "unit_disk-000"
        assert all(check["verdict"] == "pass" for check in data[0]["checks"])

        result = self.runner.invoke(cli, ["verify", str(out), "--tol-override", "0.1"])
        assert result.exit_code == 0
        assert "passed" in result.output

    def test_verify_rejects_csv(self):
        """Test CSV reports are refused by verify."""
        path = self.home / "table.csv"
        path.write_text("domain_id\n")

        result = self.runner.invoke(cli, ["verify", str(path)])
        assert result.exit_code == 2
        assert "CSV reports cannot be re-verified" in result.output

    def test_history(self):
        """Test listing and clearing the run history."""
        result = self.runner.invoke(cli, ["history"])
        assert result.exit_code == 0
        assert "No previous runs found" in result.output

        self.runner.invoke(cli, ["sweep", "large_sigma", "-o", str(self.home / "r.json")])
        result = self.runner.invoke(cli, ["history", "-n", "1"])
        assert "sweep:large_sigma" in result.output

        result = self.runner.invoke(cli, ["history", "--clear"], input="y\n")
        assert "Run history cleared" in result.output
        assert not (self.home / ".steklab" / "runs.json").exists()
