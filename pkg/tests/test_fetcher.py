import hashlib
import json
import os
import threading

import numpy as np
import pytest

from conftest import PY
from tenderscan.fetcher import (
    HttpError,
    NoPagesProduced,
    RasterizerFailed,
    RasterizerNotFound,
    SizeMismatch,
    SourceConfig,
    Timeout,
    TooManyRedirects,
    download_dir_for,
    download_file,
    extract_pdf_links,
    fetch_index,
    fetch_source,
    rasterize_pdf,
)
from tenderscan.stubs import STUB_RASTERIZER_TEMPLATE, write_epaper_container

DATE = "2026-01-01"


def cfg_for(site, tmp_path, path="/index.html", **kw):
    kw.setdefault("timeout", 5000)
    kw.setdefault("poll_interval", 50)
    return SourceConfig(index_url=site.url(path), name="mock", download_dir=str(tmp_path / "dl"), **kw)


@pytest.fixture(scope="module")
def fixture_bytes():
    return np.random.default_rng(0).integers(0, 256, 1 << 20, dtype=np.uint8).tobytes()


def test_source_config_invariant():
    with pytest.raises(ValueError):
        SourceConfig("http://x", poll_interval=0)
    with pytest.raises(ValueError):
        SourceConfig("http://x", timeout=100, poll_interval=100)


def test_fetch_index_ok_and_404(mock_site, tmp_path):
    mock_site.routes["/index.html"] = {"body": b"<html>hi</html>"}
    assert fetch_index(cfg_for(mock_site, tmp_path)) == "<html>hi</html>"
    with pytest.raises(HttpError) as err:
        fetch_index(cfg_for(mock_site, tmp_path, "/nope"))
    assert err.value.status == 404


def test_fetch_index_timeout(mock_site, tmp_path):
    mock_site.routes["/slow"] = {"body": b"late", "delay": 1.0}
    with pytest.raises(Timeout):
        fetch_index(cfg_for(mock_site, tmp_path, "/slow", timeout=300))


def test_redirects(mock_site, tmp_path):
    mock_site.routes["/index.html"] = {"body": b"final"}
    for i in range(3):
        mock_site.routes[f"/r{i}"] = {"status": 302, "headers": {"Location": f"/r{i + 1}" if i < 2 else "/index.html"}}
    assert fetch_index(cfg_for(mock_site, tmp_path, "/r0")) == "final"
    mock_site.routes["/loop"] = {"status": 302, "headers": {"Location": "/loop"}}
    with pytest.raises(TooManyRedirects):
        fetch_index(cfg_for(mock_site, tmp_path, "/loop"))


def test_user_agent_sent(mock_site, tmp_path):
    seen = {}
    handler = mock_site.server.RequestHandlerClass
    orig = handler.do_GET

    def spy(self):
        seen["ua"] = self.headers.get("User-Agent")
        orig(self)

    handler.do_GET = spy
    mock_site.routes["/index.html"] = {"body": b"x"}
    fetch_index(cfg_for(mock_site, tmp_path, user_agent="probe/1.0"))
    assert seen["ua"] == "probe/1.0"


def test_fetch_index_file_url(tmp_path):
    p = tmp_path / "i.html"
    p.write_text("<a class='pdf' href='a.pdf'>")
    assert "a.pdf" in fetch_index(SourceConfig(p.as_uri()))


def test_extract_links_examples():
    html = '<a class="pdf" href="/e/p1.pdf">x</a>'
    assert extract_pdf_links(html, "pdf", "https://x.np") == ["https://x.np/e/p1.pdf"]
    assert extract_pdf_links('<a class="doc" href="/a.pdf">', "pdf", "https://x.np") == []
    assert extract_pdf_links('<a class="btn pdf" href="a.pdf">', "pdf", "https://x.np/e/") == ["https://x.np/e/a.pdf"]
    assert extract_pdf_links('<a class="pdfs" href="a.pdf">', "pdf", "https://x.np") == []


def test_extract_links_order_dedupe_and_descendants():
    html = """
      <div class="pdf"><span>Issue</span><a href="/b.pdf">b</a><a href="/ignored.pdf">i</a></div>
      <a class="pdf" href="/a.pdf">a</a>
      <a class="pdf" href="/b.pdf">again</a>
      <button class="x pdf" href="https://cdn.np/c.pdf"></button>
      <a href="/not-pdf-class.pdf">no</a>
    """
    links = extract_pdf_links(html, "pdf", "https://x.np/")
    assert links == ["https://x.np/b.pdf", "https://x.np/a.pdf", "https://cdn.np/c.pdf"]


def test_extract_links_subset_of_document_hrefs():
    rng = np.random.default_rng(1)
    for _ in range(30):
        parts, hrefs, expected = [], [], []
        for i in range(rng.integers(0, 8)):
            cls = str(rng.choice(["pdf", "btn pdf", "other", ""]))
            href = f"/f{rng.integers(0, 5)}.pdf"
            url = "https://h.np" + href
            hrefs.append(url)
            if "pdf" in cls.split() and url not in expected:
                expected.append(url)
            parts.append(f'<a class="{cls}" href="{href}">{i}</a>')
        links = extract_pdf_links("<p>" + "".join(parts), "pdf", "https://h.np")
        assert set(links) <= set(hrefs)
        assert links == expected


def test_extract_links_garbage():
    assert extract_pdf_links("<<<>>>&&& <a class=", "pdf", "https://x.np") == []
    assert extract_pdf_links("", "pdf", "https://x.np") == []


def test_download_one_mib_fixture(mock_site, tmp_path, fixture_bytes):
    mock_site.routes["/issue.pdf"] = {"body": fixture_bytes, "chunk": 65536}
    cfg = cfg_for(mock_site, tmp_path)
    rec = download_file(mock_site.url("/issue.pdf"), cfg, DATE)
    data = open(rec.path, "rb").read()
    assert data == fixture_bytes
    assert rec.sha256 == hashlib.sha256(fixture_bytes).hexdigest()
    assert rec.size == len(fixture_bytes) == os.path.getsize(rec.path) and rec.status == 200
    assert os.path.dirname(rec.path) == str(download_dir_for(cfg, DATE))
    assert not [p for p in os.listdir(os.path.dirname(rec.path)) if p.endswith(".part")]


def test_download_without_content_length(mock_site, tmp_path, fixture_bytes):
    body = fixture_bytes[:200_000]
    mock_site.routes["/nolen.pdf"] = {"body": body, "content_length": False, "chunk": 50_000}
    rec = download_file(mock_site.url("/nolen.pdf"), cfg_for(mock_site, tmp_path), DATE)
    assert open(rec.path, "rb").read() == body


def test_truncated_download_raises_and_leaves_nothing(mock_site, tmp_path, fixture_bytes):
    mock_site.routes["/cut.pdf"] = {"body": fixture_bytes, "truncate_at": 300_000, "chunk": 50_000,
                                    "chunk_delay": 0.02}
    cfg = cfg_for(mock_site, tmp_path)
    with pytest.raises(SizeMismatch):
        download_file(mock_site.url("/cut.pdf"), cfg, DATE)
    folder = download_dir_for(cfg, DATE)
    assert list(folder.iterdir()) == []


def test_no_partial_file_under_final_name(mock_site, tmp_path, fixture_bytes):
    mock_site.routes["/slow.pdf"] = {"body": fixture_bytes, "chunk": 65536, "chunk_delay": 0.01}
    cfg = cfg_for(mock_site, tmp_path)
    final = download_dir_for(cfg, DATE) / "slow.pdf"
    observed, done = [], threading.Event()

    def watch():
        while not done.is_set():
            if final.exists():
                observed.append(final.stat().st_size)
    t = threading.Thread(target=watch)
    t.start()
    try:
        download_file(mock_site.url("/slow.pdf"), cfg, DATE)
    finally:
        done.set()
        t.join()
    assert observed and set(observed) == {len(fixture_bytes)}


def test_download_http_error_and_timeout(mock_site, tmp_path):
    cfg = cfg_for(mock_site, tmp_path, timeout=300)
    with pytest.raises(HttpError):
        download_file(mock_site.url("/missing.pdf"), cfg, DATE)
    mock_site.routes["/stall.pdf"] = {"body": b"x" * 10, "delay": 1.0}
    with pytest.raises(Timeout):
        download_file(mock_site.url("/stall.pdf"), cfg, DATE)
    assert not any(download_dir_for(cfg, DATE).iterdir())


def test_redownload_reuses_record_without_network(mock_site, tmp_path, fixture_bytes):
    mock_site.routes["/p.pdf"] = {"body": fixture_bytes[:1000]}
    cfg = cfg_for(mock_site, tmp_path)
    a = download_file(mock_site.url("/p.pdf"), cfg, DATE)
    b = download_file(mock_site.url("/p.pdf"), cfg, DATE)
    assert a == b and mock_site.hits["/p.pdf"] == 1
    # a tampered file is fetched again
    with open(a.path, "ab") as fh:
        fh.write(b"!")
    c = download_file(mock_site.url("/p.pdf"), cfg, DATE)
    assert mock_site.hits["/p.pdf"] == 2 and c.sha256 == a.sha256


def test_full_fetch_is_idempotent(mock_site, tmp_path, fixture_bytes):
    mock_site.routes["/index.html"] = {"body": b'<a class="pdf" href="/a.pdf">A</a><li class="pdf"><a href="b.pdf">B</a></li>'}
    mock_site.routes["/a.pdf"] = {"body": fixture_bytes[:5000]}
    mock_site.routes["/b.pdf"] = {"body": fixture_bytes[5000:9000]}
    cfg = cfg_for(mock_site, tmp_path)
    first = fetch_source(cfg, DATE)
    files_before = sorted(os.listdir(download_dir_for(cfg, DATE)))
    second = fetch_source(cfg, DATE)
    assert first == second
    assert sorted(os.listdir(download_dir_for(cfg, DATE))) == files_before
    assert [os.path.basename(r.path) for r in first] == ["a.pdf", "b.pdf"]
    assert mock_site.hits["/a.pdf"] == mock_site.hits["/b.pdf"] == 1
    sidecar = json.loads((download_dir_for(cfg, DATE) / "a.pdf.json").read_text())
    assert sidecar["sha256"] == first[0].sha256


def test_file_url_download(tmp_path):
    src = tmp_path / "src.pdf"
    src.write_bytes(b"%PDF-1.4 fake")
    cfg = SourceConfig(src.as_uri(), download_dir=str(tmp_path / "dl"))
    rec = download_file(src.as_uri(), cfg, DATE)
    assert open(rec.path, "rb").read() == b"%PDF-1.4 fake"


def test_rasterize_stub_three_pages(tmp_path):
    pdf = write_epaper_container([np.full((8, 8), 255, np.uint8)] * 3, tmp_path / "e.pdf")
    pages = rasterize_pdf(pdf, 150, tmp_path / "out", STUB_RASTERIZER_TEMPLATE)
    assert [p.name for p in pages] == ["page-000.png", "page-001.png", "page-002.png"]
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == [p.name for p in pages]


def test_rasterize_natural_page_order(tmp_path):
    imgs = [np.full((4, 4), i * 20, np.uint8) for i in range(12)]
    pdf = write_epaper_container(imgs, tmp_path / "e.pdf")
    pages = rasterize_pdf(pdf, 150, tmp_path / "out", STUB_RASTERIZER_TEMPLATE)
    from PIL import Image

    values = [int(np.asarray(Image.open(p))[0, 0]) for p in pages]
    assert values == [i * 20 for i in range(12)]


def test_rasterize_errors(tmp_path):
    bad = tmp_path / "bad.pdf"
    bad.write_bytes(b"not a zip")
    with pytest.raises(RasterizerFailed) as err:
        rasterize_pdf(bad, 150, tmp_path / "o1", STUB_RASTERIZER_TEMPLATE)
    assert "cannot open" in err.value.stderr
    with pytest.raises(RasterizerNotFound):
        rasterize_pdf(bad, 150, tmp_path / "o2", "no-such-rasterizer {input} {outdir} {dpi}")
    with pytest.raises(NoPagesProduced):
        rasterize_pdf(bad, 150, tmp_path / "o3", f"{PY} -c pass {{input}} {{outdir}} {{dpi}}")
    with pytest.raises(ValueError):
        rasterize_pdf(bad, 150, tmp_path / "o4", "pdftoppm {input}")
    assert not [p for p in (tmp_path / "o1").iterdir()]
