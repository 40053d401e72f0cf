import csv
import io
import json
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .errors import IncompleteReportError
from .harness import DomainReport

CSV_COLUMNS = (
    "domain_id",
    "k",
    "sigma_raw",
    "sigma_normalized",
    "lambda_raw",
    "lambda_normalized",
    "dim",
    "genus",
    "sigma_area",
    "omega_volume",
    "iso_ratio",
    "mean_density",
    "error",
)

HISTORY_LIMIT = 100


class ReportStorage:
    """Report files: a JSON array of domain reports, or plot-ready CSV.

    Output bytes depend only on the reports (no timestamps, fixed key
    order), so identical runs produce identical files.
    """

    FORMATS = ("json", "csv")

    def render(self, reports: Sequence[DomainReport], format: str = "json") -> str:
        if format == "json":
            return json.dumps([report.to_dict() for report in reports], indent=2) + "\n"
        if format == "csv":
            return self._render_csv(reports)
        raise ValueError(f"unknown report format {format!r}; choose from {', '.join(self.FORMATS)}")

    def _render_csv(self, reports: Sequence[DomainReport]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            shared = [
                report.dim,
                report.genus,
                report.sigma_area,
                report.omega_volume,
                report.iso_ratio,
                report.mean_density,
                "" if report.error is None else report.error["code"],
            ]
            steklov, laplace = report.steklov, report.laplace_boundary
            if steklov is None:
                writer.writerow([report.domain_id, "", "", "", "", ""] + [_cell(v) for v in shared])
                continue
            for index in range(steklov.k_count):
                row = [report.domain_id, index + 1, steklov.raw[index], steklov.normalized[index]]
                if laplace is not None and index < laplace.k_count:
                    row += [laplace.raw[index], laplace.normalized[index]]
                else:
                    row += ["", ""]
                writer.writerow([_cell(v) for v in row + shared])
        return buffer.getvalue()

    def save(self, reports: Sequence[DomainReport], path, format: Optional[str] = None) -> Path:
        path = Path(path)
        format = format or ("csv" if path.suffix.lower() == ".csv" else "json")
        text = self.render(reports, format)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(text)
        return path

    def load(self, path) -> List[DomainReport]:
        """Read a JSON report file back; CSV files carry no checks and cannot be re-verified."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            raise IncompleteReportError(f"{path}: CSV reports cannot be re-verified; use a JSON report")
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise IncompleteReportError(f"cannot read report {path}: {e}") from e
        if not isinstance(data, list):
            raise IncompleteReportError(f"{path}: expected a JSON array of domain reports")
        return [DomainReport.from_dict(entry) for entry in data]


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


class RunHistory:
    def __init__(self):
        self.storage_dir = Path.home() / ".steklab"
        self.storage_file = self.storage_dir / "runs.json"
        self._ensure_storage_dir()

    def _ensure_storage_dir(self):
        self.storage_dir.mkdir(exist_ok=True)

    def save_run(self, command: str, config: Dict, exit_code: int, report_path: Optional[str] = None) -> None:
        runs = self._load_runs()

        entry = {
            "timestamp": datetime.now().isoformat(),
            "command": command,
            "config": config,
            "exit_code": exit_code,
            "report_path": report_path,
        }

        runs.append(entry)

        # Keep only the last 100 runs
        if len(runs) > HISTORY_LIMIT:
            runs = runs[-HISTORY_LIMIT:]

        with open(self.storage_file, "w") as f:
            json.dump(runs, f, indent=2)

    def get_runs(self, command: Optional[str] = None, limit: int = 10) -> List[Dict]:
        runs = self._load_runs()

        if command:
            runs = [r for r in runs if r.get("command") == command]

        return runs[-limit:]

    def clear_runs(self) -> None:
        if self.storage_file.exists():
            self.storage_file.unlink()

    def _load_runs(self) -> List[Dict]:
        if not self.storage_file.exists():
            return []

        try:
            with open(self.storage_file, "r") as f:
                runs = json.load(f)
        except (json.JSONDecodeError, IOError):
            return []
        return runs if isinstance(runs, list) else []
