"""Evaluation report records and their CSV / JSON encodings."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


class Experiment(str, enum.Enum):
    RMSE_PAIRWISE = "RMSE_PAIRWISE"
    RETRIEVAL_OVERLAP = "RETRIEVAL_OVERLAP"
    STS_CORRELATION = "STS_CORRELATION"


# Column headings follow the conventional result-table layout for each experiment.
CSV_COLUMNS = {
    Experiment.RMSE_PAIRWISE: ["Datatype", "Group size", "RMSE", "Baseline", "Ratio"],
    Experiment.RETRIEVAL_OVERLAP: ["Datatype", "Group size", "Accuracy", "Baseline", "Ratio"],
    Experiment.STS_CORRELATION: [
        "Dataset",
        "Datatype",
        "Correlation coefficient",
        "Ratio",
        "Group size",
        "Baseline",
    ],
}
_METRIC = {
    Experiment.RMSE_PAIRWISE: "RMSE",
    Experiment.RETRIEVAL_OVERLAP: "Accuracy",
    Experiment.STS_CORRELATION: "Correlation coefficient",
}


@dataclass
class ReportRow:
    method: str  # canonical spelling, e.g. "int4:32" or "pq:32:256"
    label: str  # table spelling, e.g. "Int4" or "PQ[32, 256]"
    group: str  # "" when the method has no group size
    value: float
    baseline: float
    ratio: float | None
    dataset: str = ""


@dataclass
class EvalReport:
    experiment: Experiment
    rows: list[ReportRow]
    metadata: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def value(self, method: str) -> float:
        return self.row(method).value

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "columns": CSV_COLUMNS[self.experiment],
            "rows": [asdict(r) for r in self.rows],
            "metadata": self.metadata,
            "histograms": self.histograms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            Experiment(d["experiment"]),
            [ReportRow(**r) for r in d["rows"]],
            d.get("metadata", {}),
            d.get("histograms", {}),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS[self.experiment])
        for r in self.rows:
            cells = {
                "Dataset": r.dataset,
                "Datatype": r.label,
                "Group size": r.group,
                _METRIC[self.experiment]: _fmt(r.value),
                "Baseline": _fmt(r.baseline),
                "Ratio": _fmt(r.ratio),
            }
            w.writerow([cells[c] for c in CSV_COLUMNS[self.experiment]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_report(report: EvalReport, prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.csv`` and ``<prefix>.json``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    csv_path.write_text(report.to_csv())
    json_path.write_text(report.to_json())
    return csv_path, json_path


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


MERGED_COLUMNS = ["Experiment", "Dataset", "Datatype", "Group size", "Metric", "Value", "Baseline", "Ratio"]


def merge_reports(reports: list[EvalReport]) -> tuple[str, str]:
    """Combine reports into one long-format CSV and one JSON document."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MERGED_COLUMNS)
    for rep in reports:
        for r in rep.rows:
            w.writerow(
                [
                    rep.experiment.value,
                    r.dataset,
                    r.label,
                    r.group,
                    _METRIC[rep.experiment],
                    _fmt(r.value),
                    _fmt(r.baseline),
                    _fmt(r.ratio),
                ]
            )
    doc = json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"
    return buf.getvalue(), doc
