"""Points files (CSV with a JSON mirror) and the audit behind ``semrd verify``.

Column order is fixed: the nine core columns, then whichever optional
columns a run produced, always in the order of ``OPTIONAL_COLUMNS``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..core import RDPoint
from ..exceptions import ParseError

CORE_COLUMNS = ("method", "alpha1", "alpha2", "d_o", "d_s", "rate_bits", "rate_nats", "iterations", "converged")
OPTIONAL_COLUMNS = ("target_d_o", "target_d_s", "r_o_bits", "r_s_bits", "capacity_bits", "achievable", "error")
NUMERIC = {"alpha1", "alpha2", "d_o", "d_s", "rate_bits", "rate_nats", "target_d_o", "target_d_s", "r_o_bits", "r_s_bits", "capacity_bits"}


def point_row(point: RDPoint, **extra) -> dict:
    """Row for one point; failed points carry NaN values and the error text."""
    row = {
        "method": point.method,
        # + 0.0 folds negative zero so files do not depend on the sign of a zero slope
        "alpha1": float(point.alpha1) + 0.0,
        "alpha2": float(point.alpha2) + 0.0,
        "d_o": float(point.d_o),
        "d_s": float(point.d_s),
        "rate_bits": float(point.rate_bits),
        "rate_nats": float(point.rate_nats),
        "iterations": int(point.iterations),
        "converged": bool(point.converged),
        "error": str(point.info.get("error", "")),
    }
    row.update(extra)
    return row


def columns_of(rows: list[dict]) -> list[str]:
    present = set().union(*(r.keys() for r in rows)) if rows else set()
    return list(CORE_COLUMNS) + [c for c in OPTIONAL_COLUMNS if c in present]


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def render_csv(rows: list[dict]) -> str:
    cols = columns_of(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in cols])
    return buf.getvalue()


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def render_json(rows: list[dict]) -> str:
    cols = columns_of(rows)
    body = [{c: _json_value(row.get(c)) for c in cols} for row in rows]
    return json.dumps({"columns": cols, "rows": body}, indent=1) + "\n"


def write_points(directory, rows: list[dict], fmt: str = "both") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = directory / "points.csv"
        path.write_text(render_csv(rows), encoding="utf-8")
        written.append(path)
    if fmt in ("json", "both"):
        path = directory / "points.json"
        path.write_text(render_json(rows), encoding="utf-8")
        written.append(path)
    return written


def _parse_value(column, text, line):
    if column in NUMERIC:
        if text == "":
            return math.nan
        try:
            return float(text)
        except ValueError as exc:
            raise ParseError(f"line {line}: column {column!r} is not a number: {text!r}", line=line) from exc
    if column == "iterations":
        try:
            return int(text)
        except ValueError as exc:
            raise ParseError(f"line {line}: iterations is not an integer: {text!r}", line=line) from exc
    if column in ("converged", "achievable"):
        if text not in ("true", "false", ""):
            raise ParseError(f"line {line}: {column} must be true or false, got {text!r}", line=line)
        return None if text == "" else text == "true"
    return text


def read_points(path) -> list[dict]:
    """Parse a points CSV (or its JSON mirror); each row gets its 1-based file ``line``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}", line=None) from exc
    if path.suffix == ".json":
        try:
            body = json.loads(text)
            rows = [dict(r) for r in body["rows"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path} is not a points JSON file: {exc}", line=None) from exc
        for i, row in enumerate(rows):
            row["line"] = i + 1
            for c in NUMERIC & row.keys():
                row[c] = math.nan if row[c] is None else float(row[c])
        return rows
    lines = list(csv.reader(io.StringIO(text)))
    if not lines:
        raise ParseError(f"{path} is empty", line=1)
    header = lines[0]
    missing = [c for c in ("rate_bits", "d_o", "d_s") if c not in header]
    if missing:
        raise ParseError(f"header lacks required columns {missing}", line=1)
    rows = []
    for n, cells in enumerate(lines[1:], start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise ParseError(f"line {n}: expected {len(header)} fields, got {len(cells)}", line=n)
        row = {c: _parse_value(c, v, n) for c, v in zip(header, cells)}
        row["line"] = n
        rows.append(row)
    return rows


@dataclass
class CheckResult:
    name: str
    passed: bool
    failures: list[str] = field(default_factory=list)
    checked: int = 0


@dataclass
class VerifyReport:
    checks: list[CheckResult]
    skipped_rows: list[int]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            out.append(f"{'PASS' if c.passed else 'FAIL'} {c.name} ({c.checked} checked)")
            out.extend(f"  {f}" for f in c.failures)
        if self.skipped_rows:
            out.append(f"SKIP failed points at rows {self.skipped_rows}")
        return out


def _row_id(i, row):
    return f"row {i} (line {row['line']})"


def verify_rows(rows: list[dict], eps: float = 1e-6) -> VerifyReport:
    """Audit rows of a surface; ``eps`` is the tolerance in bits.

    Monotonicity compares every pair of same-method rows whose distortions are
    ordered in both coordinates: the row with no larger distortions must not
    have a smaller rate.
    """
    skipped = [i for i, r in enumerate(rows) if r.get("error") or not math.isfinite(r["rate_bits"])]
    live = [(i, r) for i, r in enumerate(rows) if i not in set(skipped)]

    nonneg = CheckResult("nonnegativity", True)
    for i, r in live:
        nonneg.checked += 1
        if r["rate_bits"] < -eps:
            nonneg.passed = False
            nonneg.failures.append(f"{_row_id(i, r)}: rate_bits={r['rate_bits']!r} is negative")

    mono = CheckResult("monotonicity", True)
    for a, (i, r) in enumerate(live):
        for j, s in live[a + 1:]:
            if r.get("method") != s.get("method"):
                continue
            for (p, lo), (q, hi) in (((i, r), (j, s)), ((j, s), (i, r))):
                if lo["d_o"] <= hi["d_o"] and lo["d_s"] <= hi["d_s"]:
                    mono.checked += 1
                    if lo["rate_bits"] < hi["rate_bits"] - eps:
                        mono.passed = False
                        mono.failures.append(
                            f"{_row_id(p, lo)} has lower distortions than {_row_id(q, hi)} but a lower rate "
                            f"({lo['rate_bits']!r} < {hi['rate_bits']!r})"
                        )
                    break
    checks = [nonneg, mono]

    if live and all("r_o_bits" in r and "r_s_bits" in r for _, r in live):
        bounds = CheckResult("bounds", True)
        for i, r in live:
            if not (math.isfinite(r["r_o_bits"]) and math.isfinite(r["r_s_bits"])):
                continue
            bounds.checked += 1
            low, high = max(r["r_o_bits"], r["r_s_bits"]), r["r_o_bits"] + r["r_s_bits"]
            if not low - eps <= r["rate_bits"] <= high + eps:
                bounds.passed = False
                bounds.failures.append(f"{_row_id(i, r)}: rate_bits={r['rate_bits']!r} outside [{low!r}, {high!r}]")
        checks.append(bounds)

    if live and all("capacity_bits" in r for _, r in live):
        ach = CheckResult("achievability", True)
        for i, r in live:
            if "achievable" not in r or r["achievable"] is None:
                continue
            ach.checked += 1
            expect = r["rate_bits"] <= r["capacity_bits"]
            if bool(r["achievable"]) != expect:
                ach.passed = False
                ach.failures.append(f"{_row_id(i, r)}: achievable flag {r['achievable']} but rate {r['rate_bits']!r} vs capacity {r['capacity_bits']!r}")
        checks.append(ach)
    return VerifyReport(checks, skipped)


def verify(points_path, eps: float = 1e-6) -> VerifyReport:
    """Parse a points file and audit it."""
    return verify_rows(read_points(points_path), eps)
