"""Gap-versus-sensitivity correlation tables."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np


class UndefinedCorrelation(ValueError):
    pass


def pearson(xs, ys):
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d series of equal length")
    if x.size < 3:
        raise ValueError("pearson needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("undefined correlation: one series is constant")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationRow:
    t: int
    train_loss: dict
    test_loss: dict
    ts_norm: dict

    @property
    def gap(self):
        return {c: self.test_loss[c] - self.train_loss[c] for c in self.train_loss}

    @property
    def mean_gap(self):
        g = self.gap
        return float(np.mean([g[c] for c in sorted(g)]))


def rows_to_csv(rows, classes):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t"]
    for c in classes:
        header += [f"train_loss_{c}", f"test_loss_{c}", f"gap_{c}", f"ts_norm_{c}"]
    header.append("mean_gap")
    w.writerow(header)
    for r in rows:
        line = [r.t]
        gap = r.gap
        for c in classes:
            line += [repr(float(r.train_loss[c])), repr(float(r.test_loss[c])), repr(float(gap[c])),
                     repr(float(r.ts_norm[c]))]
        line.append(repr(r.mean_gap))
        w.writerow(line)
    return buf.getvalue()


def read_correlation_csv(path_or_text):
    """Parse a correlation CSV into ``(t, classes, columns)``."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("malformed correlation CSV: empty") from None
    if not header or header[0] != "t":
        raise ValueError("malformed correlation CSV: first column must be 't'")
    data = [row for row in reader if row]
    cols = {h: [] for h in header}
    for lineno, row in enumerate(data, 2):
        if len(row) != len(header):
            raise ValueError(f"malformed correlation CSV: line {lineno} has {len(row)} fields")
        for h, v in zip(header, row):
            try:
                cols[h].append(float(v))
            except ValueError:
                raise ValueError(f"malformed correlation CSV: line {lineno} value {v!r}") from None
    classes = [int(h[len("gap_"):]) for h in header if h.startswith("gap_")]
    if not classes:
        raise ValueError("malformed correlation CSV: no gap columns")
    return np.asarray(cols["t"]), classes, {k: np.asarray(v) for k, v in cols.items()}


def summarize(rows, classes):
    """Per-class ``r(gap_c, norm_c)`` and ``r(mean gap, norm_c)``."""
    if len(rows) < 3:
        raise ValueError(f"need at least 3 checkpoints for a correlation, have {len(rows)}")
    mean_gap = [r.mean_gap for r in rows]
    out = {}
    for c in classes:
        gap = [r.gap[c] for r in rows]
        norm = [r.ts_norm[c] for r in rows]
        out[c] = {"r_gap": _safe_pearson(gap, norm), "r_mean_gap": _safe_pearson(mean_gap, norm)}
    return out


def _safe_pearson(xs, ys):
    try:
        return pearson(xs, ys)
    except UndefinedCorrelation:
        return float("nan")


def summary_text(summary):
    lines = ["class,pearson_gap_vs_norm,pearson_mean_gap_vs_norm"]
    for c in sorted(summary):
        lines.append(f"{c},{summary[c]['r_gap']!r},{summary[c]['r_mean_gap']!r}")
    return "\n".join(lines) + "\n"
