import csv
import io
import json
import math

import numpy as np
import pytest

from fracsing.barriers import Window
from fracsing.branch import BifurcationBranch, BranchRow, UniquenessReport, UniquenessRow
from fracsing.core import ProblemSpec, cone_inf, make_grid
from fracsing.enumutils import OutputFormat, SolutionKind
from fracsing.errors import CertificationError, ExportError
from fracsing.export import BRANCH_HEADER, audit_branch, export, format_float, read_branch_json, render
from fracsing.multiplicity import minimal_solution
from fracsing.operator import assemble, principal_eigenpair
from fracsing.semipositone import Branch, BranchPoint

WINDOW = Window(lambda1=0.13, lambda2=0.26, a_star=40.0, M2=2.5, M3=0.9, C1=0.7, R=0.5, w_sup=1.1, binding="sigma2")


def _row(lam: float, sup: float, flag: str = "ok") -> BranchRow:
    if flag != "ok":
        return BranchRow(lam=lam, kind=SolutionKind.MINIMAL, sup_norm=math.nan, residual=math.nan,
                         cone_inf=math.nan, flag=flag)
    return BranchRow(lam=lam, kind=SolutionKind.MINIMAL, sup_norm=sup, residual=1e-9, cone_inf=0.5)


def test_format_float() -> None:
    assert format_float(0.1) == "0.1"
    assert format_float(1e-300) == "1e-300"
    assert format_float(math.nan) == "nan"
    assert float(format_float(1.0 / 3.0)) == 1.0 / 3.0


def test_empty_branch_is_header_only() -> None:
    text = render(BifurcationBranch(), OutputFormat.CSV)
    assert text == ",".join(BRANCH_HEADER) + "\n"
    data = json.loads(render(BifurcationBranch(), "json"))
    assert data["rows"] == []


def test_csv_and_json_agree() -> None:
    branch = BifurcationBranch(rows=[_row(0.1, 1.0), _row(0.2, 2.0), _row(0.4, 0.0, "ConvergenceError")],
                               window=WINDOW, empirical_lambda_star=0.2)
    records = list(csv.reader(io.StringIO(render(branch, "csv"))))
    data = json.loads(render(branch, "json"))
    assert records[0] == list(BRANCH_HEADER)
    assert len(records) - 1 == len(data["rows"]) == 3
    # NaN is written out in CSV and as null in JSON
    assert records[3][2] == "nan"
    assert records[3][5] == "ConvergenceError"
    assert data["rows"][2]["sup_norm"] is None
    assert data["rows"][0]["kind"] == "minimal"
    assert data["window"]["empty"] is False
    assert data["empirical_lambda_star"] == 0.2


def test_table_output() -> None:
    text = render(WINDOW, None)
    header, values = text.splitlines()
    assert header.split("\t")[:2] == ["lambda1", "lambda2"]
    assert values.split("\t")[-1] == "false"


def test_other_results() -> None:
    report = UniquenessReport(rows=[UniquenessRow(lam=10.0, min_sup=3.0, max_sup=3.0, gap=0.0, unique=True,
                                                  contraction=0.25)],
                              lambda_star=10.0, predicted_exponent=-0.5, f5_verified=True)
    assert render(report, "csv").splitlines()[1] == "10.0,3.0,3.0,0.0,true,0.25,ok"
    assert json.loads(render(report, "json"))["rows"][0]["contraction"] == 0.25
    theta = Branch(points=[BranchPoint(theta=0.0, v=np.ones(3), residual=0.0, cone_inf=1.0)], theta_max=0.5)
    data = json.loads(render(theta, "json"))
    assert data["stop_reason"] == "theta_max"
    assert data["points"][0]["sup_norm"] == 1.0
    with pytest.raises(TypeError):
        render(object(), "csv")


def test_export_errors(tmp_path) -> None:
    with pytest.raises(ExportError):
        export(BifurcationBranch(), str(tmp_path / "missing" / "branch.csv"), "csv")
    bad = tmp_path / "bad.json"
    bad.write_text("not json")
    with pytest.raises(ExportError):
        read_branch_json(str(bad))
    other = tmp_path / "other.json"
    other.write_text("{}")
    with pytest.raises(ExportError):
        read_branch_json(str(other))


def test_audit_round_trip(tmp_path) -> None:
    op = assemble(make_grid(64), 0.25)
    spec = ProblemSpec(n=64)
    phi = principal_eigenpair(op).vector
    rows = []
    for lam in [0.05, 0.1]:
        u = minimal_solution(op, spec.with_lambda(lam)).result
        rows.append(BranchRow(lam=lam, kind=SolutionKind.MINIMAL, sup_norm=float(np.max(u)), residual=1e-9,
                              cone_inf=cone_inf(u, phi), u=u))
    path = str(tmp_path / "branch.json")
    export(BifurcationBranch(rows=rows, window=WINDOW), path, OutputFormat.JSON, audit=True)

    loaded = read_branch_json(path)
    assert loaded.rows == rows
    assert loaded.window == WINDOW
    for a, b in zip(loaded.rows, rows):
        assert np.array_equal(a.u, b.u)
    assert audit_branch(op, spec, path) <= spec.tol_residual

    # Without nodal values the audit has nothing to check
    plain = str(tmp_path / "plain.json")
    export(BifurcationBranch(rows=rows), plain, "json")
    with pytest.raises(CertificationError):
        audit_branch(op, spec, plain)
