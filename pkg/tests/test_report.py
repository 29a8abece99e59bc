import pytest

from src.simulation.metrics import compute_norm_delivery_time
from src.simulation.report import REPORT_COLUMNS, emit_report, report_frame
from src.utility.db_ops import get_report_rows, save_report
from src.utility.models import Architecture, FeatureShare, MetricsReport, MetricsRow

Z_SWEEP = [0, 5, 10, 15, 20]


def make_report(run_id="run-a", scale=1):
    rows = []
    for cp_id, other in (("CP1", Architecture.CONVENTIONAL_OWN_HISTORY),
                         ("CP2", Architecture.CONVENTIONAL_RANDOM),
                         ("CP3", Architecture.CONVENTIONAL_RANDOM)):
        for architecture in (Architecture.BCDN, other):
            for z in Z_SWEEP:
                hits = z * scale // 2
                chr = hits / 20
                rows.append(MetricsRow(
                    cp=cp_id,
                    architecture=architecture,
                    z=z,
                    chr=chr,
                    norm_delivery_time=compute_norm_delivery_time(chr, 4.0),
                    requests=20,
                    hits=hits,
                ))
    ranking = [FeatureShare(rank=1, feature="Drama", share=0.75), FeatureShare(rank=2, feature="Comedy", share=0.25)]
    return MetricsReport(run_id=run_id, tau_ratio=4.0, rows=rows, feature_ranking=ranking)


def test_report_frame_columns():
    frame = report_frame(make_report())
    assert list(frame.columns) == REPORT_COLUMNS
    assert len(frame) == 30


def test_emit_report(tmp_path):
    paths = emit_report(make_report(), tmp_path / "out")
    assert [path.name for path in paths] == ["report.csv", "fig_chr.dat", "fig_delivery_time.dat", "feature_ranking.csv"]

    lines = paths[0].read_text(encoding="utf-8").splitlines()
    assert len(lines) == 31
    assert lines[0] == "cp,architecture,Z,chr,norm_delivery_time,requests,hits"
    assert lines[1] == "CP1,BCdn,0,0.000000000000,5.000000000000,20,0"
    assert lines[3] == "CP1,BCdn,10,0.250000000000,4.000000000000,20,5"

    chr_lines = paths[1].read_text(encoding="utf-8").splitlines()
    assert chr_lines[0] == (
        "Z CP1/BCdn CP1/ConventionalOwnHistory CP2/BCdn CP2/ConventionalRandom CP3/BCdn CP3/ConventionalRandom"
    )
    assert [line.split()[0] for line in chr_lines[1:]] == [str(z) for z in Z_SWEEP]
    assert chr_lines[1].split()[1:] == ["0.000000000000"] * 6

    delivery = paths[2].read_text(encoding="utf-8").splitlines()
    assert delivery[1].split()[1] == "5.000000000000"

    assert paths[3].read_text(encoding="utf-8").splitlines() == [
        "rank,feature,share",
        "1,Drama,0.750000000000",
        "2,Comedy,0.250000000000",
    ]


def test_emit_empty_report(tmp_path):
    paths = emit_report(MetricsReport(run_id="empty", tau_ratio=4.0), tmp_path)
    assert paths[0].read_text(encoding="utf-8") == ",".join(REPORT_COLUMNS) + "\n"
    assert paths[1].read_text(encoding="utf-8") == "Z\n"
    assert paths[2].read_text(encoding="utf-8") == "Z\n"
    assert paths[3].read_text(encoding="utf-8") == "rank,feature,share\n"


def test_results_store_replaces_rerun(tmp_path):
    db_file = str(tmp_path / "results.db")
    assert save_report(make_report(), db_file) == 30
    save_report(make_report(scale=2), db_file)
    save_report(make_report(run_id="run-b"), db_file)
    rows = get_report_rows("run-a", db_file)
    assert len(rows) == 30
    assert rows[3]["hits"] == 15
    assert rows[3]["architecture"] == "BCdn"
    assert len(get_report_rows(db_file=db_file)) == 60
    assert get_report_rows("missing", db_file) == []


def test_emit_report_stores_rows(tmp_path):
    db_file = str(tmp_path / "results.db")
    emit_report(make_report(), tmp_path / "out", db_file=db_file)
    rows = get_report_rows("run-a", db_file)
    assert rows[0]["chr"] == pytest.approx(0.0)
    assert {row["cp"] for row in rows} == {"CP1", "CP2", "CP3"}
