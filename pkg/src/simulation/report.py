from pathlib import Path
from typing import List

import pandas as pd

from src.utility.db_ops import save_report
from src.utility.logger import logger
from src.utility.models import MetricsReport

REPORT_COLUMNS = ["cp", "architecture", "Z", "chr", "norm_delivery_time", "requests", "hits"]
_FLOAT_FORMAT = "%.12f"


def report_frame(report: MetricsReport) -> pd.DataFrame:
    rows = [
        {
            "cp": row.cp,
            "architecture": row.architecture.value,
            "Z": row.z,
            "chr": row.chr,
            "norm_delivery_time": row.norm_delivery_time,
            "requests": row.requests,
            "hits": row.hits,
        }
        for row in report.rows
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def _plot_data(frame: pd.DataFrame, metric: str) -> pd.DataFrame:
    """Z down the rows, one ``cp/architecture`` series per column."""
    if frame.empty:
        return pd.DataFrame(columns=["Z"])
    series = frame.assign(series=frame["cp"] + "/" + frame["architecture"])
    wide = series.pivot(index="Z", columns="series", values=metric).sort_index()
    wide = wide[sorted(wide.columns)]
    wide.columns.name = None
    return wide.reset_index()


def emit_report(report: MetricsReport, out_dir, db_file=None) -> List[Path]:
    """
    Writes the metrics table, the two plot-data files and the feature ranking.

    Args:
        report: A finished scenario report.
        out_dir: Directory for the outputs; created if missing.
        db_file: If given, rows are also stored in this sqlite results store.

    Returns:
        List[Path]: Files written, in a fixed order.

    Raises:
        OSError: If ``out_dir`` is not writable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = report_frame(report)
    written = []

    path = out_dir / "report.csv"
    frame.to_csv(path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")
    written.append(path)

    for metric, name in (("chr", "fig_chr.dat"), ("norm_delivery_time", "fig_delivery_time.dat")):
        path = out_dir / name
        _plot_data(frame, metric).to_csv(path, sep=" ", index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")
        written.append(path)

    path = out_dir / "feature_ranking.csv"
    ranking = pd.DataFrame([share.model_dump() for share in report.feature_ranking], columns=["rank", "feature", "share"])
    ranking.to_csv(path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")
    written.append(path)

    if db_file is not None:
        save_report(report, db_file)
    logger.info(f"Report {report.run_id} written to {out_dir} ({len(frame)} rows)")
    return written
