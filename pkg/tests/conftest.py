import os

import pytest

from ecgbeats import synthetic

# Real MIT-BIH files are looked up here; data-dependent tests skip cleanly
# when the directory is absent (no network in CI).
REAL_DATA_DIR = os.environ.get("MITDB_DIR", os.path.join("data", "mitdb"))


def real_data_available() -> bool:
    return os.path.exists(os.path.join(REAL_DATA_DIR, "100.hea"))


def require_real_data():
    if not real_data_available():
        pytest.skip(f"MIT-BIH data not found under {REAL_DATA_DIR!r} "
                    "(set MITDB_DIR or run `ecgbeats ingest --fetch`)")


@pytest.fixture(scope="session")
def synth_db(tmp_path_factory):
    """Small synthetic database: 4 DS1 + 4 DS2 + 1 paced record, 60 s each."""
    root = tmp_path_factory.mktemp("synthdb")
    ids = ("101", "106", "108", "109", "100", "103", "105", "111", "102")
    synthetic.make_database(root, ids, duration_s=60.0, seed=7)
    return root
