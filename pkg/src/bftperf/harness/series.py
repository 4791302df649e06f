"""Sweep results and their CSV form."""

import csv
import math
from dataclasses import dataclass, field

from ..errors import ConfigError

COLUMNS = (
    "variable", "value", "sim_mean", "sim_n", "model", "model_improved", "q", "tau0_star",
    "curve", "protocol", "topology", "n", "n_f", "tau0", "rs", "chains", "seed",
)
_INT_COLUMNS = {"sim_n", "n", "n_f", "chains", "seed"}
_STR_COLUMNS = {"variable", "curve", "protocol", "topology"}


@dataclass
class SeriesPoint:
    value: float
    sim_mean: float
    sim_n: int
    model: float | None
    model_improved: float | None
    q: float | None
    tau0_star: float | None
    protocol: str = ""
    topology: str = ""
    n: int = 0
    n_f: int = 0
    tau0: float = 0.0
    rs: float = 0.0
    chains: int = 1
    seed: int = 0


@dataclass
class ResultSeries:
    """One curve: a sweep variable and a point per value that ran."""

    variable: str
    label: str = ""
    points: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def column(self, name):
        return [getattr(p, name) for p in self.points]

    @property
    def values(self):
        return self.column("value")

    @property
    def sim_means(self):
        return self.column("sim_mean")

    @property
    def models(self):
        return self.column("model")

    def rows(self):
        for p in self.points:
            row = {c: getattr(p, c, None) for c in COLUMNS}
            row["variable"] = self.variable
            row["curve"] = self.label
            yield row

    def relative_errors(self, column="model"):
        """(sim - model)/model per point; None where the model is missing."""
        out = []
        for p in self.points:
            m = getattr(p, column)
            out.append(None if m is None or not m else p.sim_mean / m - 1.0)
        return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)   # shortest round-tripping form, always >= 6 digits of precision
    return str(v)


def write_csv(series, fh):
    """Write series rows to an open text stream."""
    if isinstance(series, ResultSeries):
        series = [series]
    w = csv.writer(fh)
    w.writerow(COLUMNS)
    for s in series:
        for row in s.rows():
            w.writerow([_fmt(row[c]) for c in COLUMNS])


def export_csv(series, path):
    """Write one or more series to ``path`` (header row first)."""
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None
    with fh:
        write_csv(series, fh)


def _parse(col, text):
    if col in _STR_COLUMNS:
        return text
    if text == "":
        return None
    if col in _INT_COLUMNS:
        return int(text)
    return float(text)


def read_csv(path):
    """Inverse of ``export_csv``; curves come back in file order."""
    out = []
    by_key = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != COLUMNS:
            raise ConfigError(f"{path}: unexpected header {r.fieldnames}")
        for raw in r:
            row = {c: _parse(c, raw[c]) for c in COLUMNS}
            key = (row["variable"], row["curve"] or "")
            if key not in by_key:
                by_key[key] = ResultSeries(key[0], key[1])
                out.append(by_key[key])
            row.pop("variable")
            row.pop("curve")
            by_key[key].points.append(SeriesPoint(**row))
    return out
