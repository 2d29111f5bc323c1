import csv

import pytest

from netform.analysis import RecursionSequence
from netform.coupling import PicardRecord, PicardTrace, RunStatus, SweepResult, SweepRow
from netform.diagnostics import (
    Classification,
    ExcessReport,
    ExcessRow,
    HolderEstimate,
    RegularityRow,
)
from netform.reports import ReportBundle, emit_reports, fmt, format_sequence


def _read(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.mark.parametrize("value, text", [
    (None, "nan"),
    (True, "true"),
    (False, "false"),
    (3, "3"),
    (0.1, "0.10000000000000001"),
    (2.5, "2.5"),
    (RunStatus.BLEW_UP, "blew_up"),
    (Classification.REGULAR, "regular_candidate"),
])
def test_fmt(value, text):
    assert fmt(value) == text


def test_empty_bundle_writes_header_only_files(tmp_path):
    written = emit_reports(tmp_path / "out", ReportBundle(dim=2))
    assert len(written) == 10
    for path in written:
        rows = _read(path)
        assert len(rows) == 1
    assert _read(tmp_path / "out" / "excess.csv")[0][:4] == ["probe", "y_0", "y_1", "tau"]


def test_picard_trace_rows(tmp_path):
    trace = PicardTrace(
        records=[
            PicardRecord(k=0, a_k=1.0, b_k=0.5, d_k=2.0, eta_k=0.0),
            PicardRecord(k=1, a_k=1.0, b_k=0.5, d_k=2.0, eta_k=0.25),
            PicardRecord(k=2, a_k=1.0, b_k=0.5, d_k=2.0, eta_k=0.125, ratio=0.5),
        ],
        b_exponent=2.0,
    )
    emit_reports(tmp_path, ReportBundle(dim=1, picard=trace))
    rows = _read(tmp_path / "picard_trace.csv")
    assert rows[0] == ["k", "a_k", "b_k", "d_k", "eta_k", "ratio"]
    assert rows[1][-1] == "nan"
    assert rows[3] == ["2", "1", "0.5", "2", "0.125", "0.5"]


def test_sweep_rows_sorted_by_descending_scale(tmp_path):
    result = SweepResult(
        rows=[
            SweepRow(scale=0.5, survival_time=1.0, status=RunStatus.COMPLETED, smallness=0.1),
            SweepRow(scale=2.0, survival_time=0.3, status=RunStatus.BLEW_UP, smallness=0.4),
            SweepRow(scale=1.0, survival_time=0.6, status=RunStatus.BLEW_UP, smallness=0.2),
        ],
        t_target=1.0,
    )
    emit_reports(tmp_path, ReportBundle(dim=1, sweep=result))
    rows = _read(tmp_path / "sweep.csv")[1:]
    assert [r[0] for r in rows] == ["2", "1", "0.5"]
    assert rows[0][2] == "blew_up"


def test_excess_rows_are_probe_major(tmp_path):
    def report(y, radii):
        return ExcessReport(rows=[
            ExcessRow(y=y, tau=0.5, r=r, m_mean=(0.0,), p_mean=(0.0,), a_r=0.0, e_r=r, clipped=False)
            for r in radii
        ])

    bundle = ReportBundle(dim=1, excess=[report((0.25,), [0.2, 0.1]), report((0.75,), [0.2, 0.1])])
    emit_reports(tmp_path, bundle)
    rows = _read(tmp_path / "excess.csv")[1:]
    assert [(r[0], r[3]) for r in rows] == [("0", "0.20000000000000001"), ("0", "0.10000000000000001"),
                                            ("1", "0.20000000000000001"), ("1", "0.10000000000000001")]
    assert rows[0][-1] == "false"


def test_regularity_and_holder_rows(tmp_path):
    row = RegularityRow(
        y=(0.5,), tau=0.5, min_excess=3.0, max_mean=1.0, con1=2.0, con2=4.0,
        excess_flag=True, growth_flag=False, classification=Classification.SINGULAR,
    )
    holder = HolderEstimate(beta=0.5, seminorm=2.0, seminorms={1.0: 3.0, 0.5: 2.0})
    emit_reports(tmp_path, ReportBundle(dim=1, regularity=[row], holder=holder))
    regularity = _read(tmp_path / "regularity.csv")
    assert regularity[1][-1] == "singular_candidate"
    assert regularity[1][-3:-1] == ["nan", "nan"]
    assert _read(tmp_path / "holder.csv")[1:] == [["0.5", "2", "true"], ["1", "3", "false"]]


def test_format_sequence():
    seq = RecursionSequence(values=[0.5, 0.25], overflow=True)
    assert format_sequence(seq).splitlines() == ["0 0.5", "1 0.25", "overflow"]
