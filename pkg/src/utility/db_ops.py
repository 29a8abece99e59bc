import sqlite3

from src.utility.config import RESULTS_DB
from src.utility.logger import logger

table_name = "metrics"

COLUMNS = ["run_id", "cp", "architecture", "z", "chr", "norm_delivery_time", "requests", "hits"]


def create_connection(db_file):
    """Create and return a connection to the SQLite database."""
    conn = sqlite3.connect(db_file)
    return conn


def create_table(cursor):
    """Create the metrics table if it doesn't exist."""
    cursor.execute(f'''
    CREATE TABLE IF NOT EXISTS {table_name} (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        run_id TEXT NOT NULL,
        cp TEXT NOT NULL,
        architecture TEXT NOT NULL,
        z INTEGER NOT NULL,
        chr REAL NOT NULL,
        norm_delivery_time REAL NOT NULL,
        requests INTEGER NOT NULL,
        hits INTEGER NOT NULL,
        UNIQUE (run_id, cp, architecture, z)
    )
    ''')


def insert_metrics_row(cursor, run_id, row):
    """Insert or replace one metrics row of a run."""
    cursor.execute(f'''
    INSERT OR REPLACE INTO {table_name} (run_id, cp, architecture, z, chr, norm_delivery_time, requests, hits)
    VALUES (?, ?, ?, ?, ?, ?, ?, ?)
    ''', (run_id, row.cp, row.architecture.value, row.z, row.chr, row.norm_delivery_time, row.requests, row.hits))


def save_report(report, db_file=None):
    """
    Persist every row of a MetricsReport under its run id.

    Rerunning the same configuration replaces its rows instead of duplicating them.

    Returns:
        int: Number of rows written.

    Raises:
        sqlite3.DatabaseError: If the store cannot be written.
    """
    db_file = db_file or RESULTS_DB
    conn = None
    try:
        conn = create_connection(db_file)
        cursor = conn.cursor()
        create_table(cursor)
        for row in report.rows:
            insert_metrics_row(cursor, report.run_id, row)
        conn.commit()
        logger.info(f"Stored {len(report.rows)} rows of run {report.run_id} in {db_file}")
        return len(report.rows)
    except sqlite3.DatabaseError as e:
        logger.error(f"Database error occurred: {e}")
        raise
    finally:
        if conn:
            conn.close()


def get_report_rows(run_id=None, db_file=None):
    """Fetch the rows of one run if run_id is provided, else every stored row, as dicts."""
    db_file = db_file or RESULTS_DB
    conn = None
    try:
        conn = create_connection(db_file)
        cursor = conn.cursor()
        create_table(cursor)
        columns = ", ".join(COLUMNS)
        if run_id:
            cursor.execute(f'SELECT {columns} FROM {table_name} WHERE run_id = ? ORDER BY id', (run_id,))
        else:
            cursor.execute(f'SELECT {columns} FROM {table_name} ORDER BY id')
        return [dict(zip(COLUMNS, row)) for row in cursor.fetchall()]
    except sqlite3.DatabaseError as e:
        logger.error(f"Database error occurred: {e}")
        return []
    finally:
        if conn:
            conn.close()
