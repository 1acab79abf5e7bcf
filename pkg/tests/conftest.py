import shutil
import threading
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def store_dir(tmp_path) -> Path:
    """Throwaway copy of the fixture store for tests that mutate it."""
    dst = tmp_path / "store"
    shutil.copytree(FIXTURES, dst)
    return dst


@pytest.fixture
def live_server(store_dir):
    """In-process trained server on an ephemeral port, torn down after."""
    from diane import records
    from diane.detect import load_cascade
    from diane.server import AppServer
    from diane.soap import Service, TrainResponse
    from diane.stream import Relay

    store = records.load_store(store_dir / "records.json")
    cascade = load_cascade((store_dir / "synthetic-face.cascade").read_text())
    service = Service(store, cascade, store_path=store_dir / "records.json")
    assert isinstance(service.handle_train({"k_max": 16}), TrainResponse)
    app = AppServer(service, Relay(), port=0, log=open("/dev/null", "w"))
    thread = threading.Thread(target=app.serve_forever, daemon=True)
    thread.start()
    try:
        yield app
    finally:
        app.shutdown()
        thread.join(timeout=5)
