"""CSV and JSON writers for branches, scans, windows and solution sets."""
import csv
import io
import json
import math
import os
from typing import Any, Iterable, Optional, Sequence, TextIO

import numpy as np

from fracsing.barriers import Window
from fracsing.branch import BifurcationBranch, BranchRow, UniquenessReport, audit_rows
from fracsing.core import ProblemSpec
from fracsing.enumutils import OutputFormat, SolutionKind, parse_enum
from fracsing.errors import ExportError
from fracsing.multiplicity import SolutionSet
from fracsing.operator import GreenOperator
from fracsing.semipositone import Branch
from fracsing.singular_solver import EpsStep

BRANCH_HEADER = ("lambda", "kind", "sup_norm", "residual", "cone_inf", "flag")
SCAN_HEADER = ("lambda", "min_sup", "max_sup", "gap", "unique", "contraction", "flag")
WINDOW_HEADER = ("lambda1", "lambda2", "a_star", "M2", "M3", "C1", "R", "w_sup", "binding", "empty")
SOLUTION_HEADER = ("lambda", "kind", "sup_norm", "residual", "cone_inf")
THETA_HEADER = ("theta", "sup_norm", "residual", "cone_inf")
EPS_HEADER = ("eps", "sup_norm", "energy")


def format_float(v: float) -> str:
    """Shortest round-trip decimal, `nan` for NaN."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _json_float(v: float) -> Optional[float]:
    v = float(v)
    return None if math.isnan(v) or math.isinf(v) else v


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if v is None:
        return ""
    return str(v)


def branch_records(branch: BifurcationBranch) -> list[tuple]:
    return [(r.lam, r.kind, r.sup_norm, r.residual, r.cone_inf, r.flag) for r in branch.rows]


def branch_to_json(branch: BifurcationBranch, audit: bool = False) -> dict:
    rows = []
    for r in branch.rows:
        row = {"lambda": r.lam, "kind": r.kind.to_json(), "sup_norm": _json_float(r.sup_norm),
               "residual": _json_float(r.residual), "cone_inf": _json_float(r.cone_inf), "flag": r.flag}
        if audit and r.u is not None:
            row["u"] = [float(x) for x in r.u]
        rows.append(row)
    return {"rows": rows, "window": branch.window.to_json() if branch.window else None,
            "empirical_lambda_star": branch.empirical_lambda_star}


def branch_from_json(data: dict) -> BifurcationBranch:
    rows = []
    for row in data["rows"]:
        u = np.array(row["u"], dtype=np.float64) if "u" in row else None
        rows.append(BranchRow(lam=float(row["lambda"]), kind=parse_enum(SolutionKind, row["kind"]),
                              sup_norm=_nan_if_none(row["sup_norm"]), residual=_nan_if_none(row["residual"]),
                              cone_inf=_nan_if_none(row["cone_inf"]), flag=row["flag"], u=u))
    window = None
    if data.get("window"):
        fields = {k: v for k, v in data["window"].items() if k != "empty"}
        window = Window(**fields)
    return BifurcationBranch(rows=rows, window=window, empirical_lambda_star=data.get("empirical_lambda_star"))


def _nan_if_none(v: Optional[float]) -> float:
    return math.nan if v is None else float(v)


def scan_records(report: UniquenessReport) -> list[tuple]:
    return [(r.lam, r.min_sup, r.max_sup, r.gap, r.unique, r.contraction, r.flag) for r in report.rows]


def scan_to_json(report: UniquenessReport) -> dict:
    return {"rows": [{"lambda": r.lam, "min_sup": _json_float(r.min_sup), "max_sup": _json_float(r.max_sup),
                      "gap": _json_float(r.gap), "unique": r.unique, "contraction": _json_float(r.contraction),
                      "flag": r.flag} for r in report.rows],
            "lambda_star": report.lambda_star, "decay_exponent": report.decay_exponent,
            "contraction_exponent": report.contraction_exponent,
            "predicted_exponent": report.predicted_exponent, "f5_verified": report.f5_verified}


def window_records(window: Window) -> list[tuple]:
    d = window.to_json()
    return [tuple(d[k] for k in WINDOW_HEADER)]


def solution_records(sols: SolutionSet) -> list[tuple]:
    return [(sols.lam, s.kind, s.sup_norm, s.residual, s.cone_inf) for s in sols.solutions]


def solutions_to_json(sols: SolutionSet) -> dict:
    return {"lambda": sols.lam,
            "solutions": [{"sup_norm": s.sup_norm, "residual": s.residual, "kind": s.kind.to_json(),
                           "cone_inf": s.cone_inf} for s in sols.solutions],
            "separations": sols.separations,
            "window": {"lambda1": sols.window.lambda1, "lambda2": sols.window.lambda2}}


def theta_records(branch: Branch) -> list[tuple]:
    return [(p.theta, p.sup_norm, p.residual, p.cone_inf) for p in branch.points]


def theta_to_json(branch: Branch) -> dict:
    return {"points": [dict(zip(THETA_HEADER, rec)) for rec in theta_records(branch)],
            "theta_max": _json_float(branch.theta_max), "stop_reason": branch.stop_reason}


def eps_records(trace: Sequence[EpsStep]) -> list[tuple]:
    return [(s.eps, s.sup_norm, s.energy) for s in trace]


def _dispatch(obj: Any, audit: bool) -> tuple[Sequence[str], list[tuple], Any]:
    if isinstance(obj, BifurcationBranch):
        return BRANCH_HEADER, branch_records(obj), branch_to_json(obj, audit)
    if isinstance(obj, UniquenessReport):
        return SCAN_HEADER, scan_records(obj), scan_to_json(obj)
    if isinstance(obj, Window):
        return WINDOW_HEADER, window_records(obj), obj.to_json()
    if isinstance(obj, SolutionSet):
        return SOLUTION_HEADER, solution_records(obj), solutions_to_json(obj)
    if isinstance(obj, Branch):
        return THETA_HEADER, theta_records(obj), theta_to_json(obj)
    if isinstance(obj, list) and all(isinstance(s, EpsStep) for s in obj):
        recs = eps_records(obj)
        return EPS_HEADER, recs, [dict(zip(EPS_HEADER, r)) for r in recs]
    raise TypeError("Don't know how to export %s" % type(obj).__name__)


def write_csv(stream: TextIO, header: Sequence[str], records: Iterable[tuple]):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for rec in records:
        writer.writerow([_cell(v) for v in rec])


def write_table(stream: TextIO, header: Sequence[str], records: Iterable[tuple]):
    print("\t".join(header), file=stream)
    for rec in records:
        print("\t".join(_cell(v) for v in rec), file=stream)


def dumps_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False, default=lambda o: o.to_json())


def render(obj: Any, fmt: OutputFormat | str | None, audit: bool = False) -> str:
    header, records, data = _dispatch(obj, audit)
    buf = io.StringIO()
    if fmt is None:
        write_table(buf, header, records)
        return buf.getvalue()
    fmt = parse_enum(OutputFormat, fmt)
    if fmt == OutputFormat.CSV:
        write_csv(buf, header, records)
    else:
        buf.write(dumps_json(data))
        buf.write("\n")
    return buf.getvalue()


def export(obj: Any, path: str, fmt: OutputFormat | str, audit: bool = False):
    text = render(obj, fmt, audit)
    tmp = "%s.tmp" % path
    try:
        with open(tmp, "w", newline="") as fl:
            fl.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise ExportError(path, e.strerror or str(e)) from e


def read_branch_json(path: str) -> BifurcationBranch:
    try:
        with open(path) as fl:
            data = json.load(fl)
    except OSError as e:
        raise ExportError(path, e.strerror or str(e)) from e
    except ValueError as e:
        raise ExportError(path, "not valid JSON (%s)" % e) from e
    try:
        return branch_from_json(data)
    except (KeyError, TypeError) as e:
        raise ExportError(path, "not a branch file (%s)" % e) from e


def audit_branch(op: GreenOperator, spec: ProblemSpec, path: str) -> float:
    """Reloads a branch written with audit=True and recomputes every residual. Returns the largest."""
    return audit_rows(op, spec, read_branch_json(path).rows)
