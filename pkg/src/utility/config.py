from dotenv import load_dotenv, dotenv_values
from pathlib import Path
import os

load_dotenv()

LOG_LEVEL = os.getenv("BCDN_LOG_LEVEL", "INFO").upper()
RESULTS_DB = os.getenv("BCDN_RESULTS_DB", "bcdn_results.db")
DATASET_DIR = os.getenv("BCDN_DATASET_DIR")
CRYPTO_SCHEME = os.getenv("BCDN_CRYPTO_SCHEME", "sim")


def read_config_file(path) -> dict:
    """
    Reads a flat key-value scenario file (``KEY=VALUE`` lines, ``#`` comments).

    Keys are lower-cased so that ``SEED=3`` and ``seed=3`` both address the
    ``seed`` field of ScenarioConfig. Empty values are dropped so the model
    defaults apply.

    Args:
        path: Location of the config file.

    Returns:
        dict: Raw string values keyed by field name.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file '{path}' not found")
    values = dotenv_values(path)
    return {
        key.strip().lower(): value.strip()
        for key, value in values.items()
        if value is not None and value.strip() != ""
    }
