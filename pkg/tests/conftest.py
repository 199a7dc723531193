import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent
DATA = ROOT / "data"
PY = sys.executable


class MockSite:
    """Tiny HTTP server whose routes are set per test.

    A route maps a path to a dict with ``body`` and optional ``status``,
    ``headers``, ``delay`` (seconds before responding), ``truncate_at``
    (close after that many body bytes) and ``chunk_delay``.
    """

    def __init__(self):
        self.routes = {}
        self.hits = {}
        site = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def do_GET(self):
                site.hits[self.path] = site.hits.get(self.path, 0) + 1
                route = site.routes.get(self.path)
                if route is None:
                    self.send_response(404)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                time.sleep(route.get("delay", 0))
                body = route.get("body", b"")
                self.send_response(route.get("status", 200))
                for k, v in route.get("headers", {}).items():
                    self.send_header(k, v)
                if route.get("content_length", True):
                    self.send_header("Content-Length", str(len(body)))
                else:
                    self.send_header("Connection", "close")
                self.end_headers()
                cut = route.get("truncate_at")
                payload = body if cut is None else body[:cut]
                step = route.get("chunk", 0) or len(payload) or 1
                for i in range(0, len(payload), step):
                    self.wfile.write(payload[i:i + step])
                    self.wfile.flush()
                    time.sleep(route.get("chunk_delay", 0))
                if cut is not None or not route.get("content_length", True):
                    self.close_connection = True

            def log_message(self, *a):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base(self):
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def url(self, path):
        return self.base + path

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_site():
    site = MockSite()
    yield site
    site.close()


@pytest.fixture(scope="session")
def stub_templates():
    from tenderscan.stubs import STUB_OCR_TEMPLATE, STUB_RASTERIZER_TEMPLATE

    return {"ocr": STUB_OCR_TEMPLATE, "rasterizer": STUB_RASTERIZER_TEMPLATE}


@pytest.fixture(scope="session")
def tiny_classifier():
    """xception-tiny at 64 px trained briefly on synthetic patches."""
    from tenderscan.neuralnet import TrainConfig, build_model, train_model
    from tenderscan.pipeline.synthetic import make_patch_dataset

    x, y = make_patch_dataset(200, size=64, seed=0)
    model = build_model("xception", 64, "tiny", seed=0)
    train_model(model, (x, y), None, TrainConfig(epochs=8, batch_size=16, seed=0))
    return model


def site_config(tmp_path, n_pages, spec=None, seed=0, **overrides):
    """A hermetic synthetic site plus a pipeline config that points at it."""
    from tenderscan.fetcher import SourceConfig
    from tenderscan.pipeline.config import PipelineConfig
    from tenderscan.pipeline.synthetic import build_synthetic_site
    from tenderscan.stubs import STUB_OCR_TEMPLATE, STUB_RASTERIZER_TEMPLATE

    site = build_synthetic_site(tmp_path / "site", n_pages, spec, seed=seed)
    src = SourceConfig(site["index"].as_uri(), name="synth", download_dir=str(tmp_path / "dl"))
    kw = dict(sources=[src], keywords=str(site["keywords"]), ocr_command=STUB_OCR_TEMPLATE,
              rasterizer_command=STUB_RASTERIZER_TEMPLATE, manifest=str(tmp_path / "manifest.json"),
              work_dir=str(tmp_path / "work"), workers=2)
    kw.update(overrides)
    return PipelineConfig(**kw), site


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
