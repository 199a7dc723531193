"""E-paper acquisition: index page, PDF links, verified downloads, rasterizing.

Index pages and files are fetched with plain HTTP GET (``file://`` URLs are
read from disk, which is handy for local mirrors). Downloads stream into
``<name>.part`` and are renamed into place only once complete, so a
final-named file is never partial.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import List, Optional
from urllib.parse import unquote, urljoin, urlparse
from urllib.request import url2pathname

import requests
from PIL import Image

from .ocrfilter import build_command

log = logging.getLogger(__name__)

DEFAULT_DPI = 150
DEFAULT_RASTERIZER = "pdftoppm -r {dpi} -png {input} {outdir}/page"
MAX_REDIRECTS = 5
CHUNK = 64 * 1024
IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pbm", ".jpg", ".jpeg", ".tif", ".tiff"}


class FetchError(Exception):
    pass


class HttpError(FetchError):
    def __init__(self, status: int, url: str = ""):
        super().__init__(f"HTTP {status} for {url}")
        self.status = status
        self.url = url


class Timeout(FetchError, TimeoutError):
    pass


class TooManyRedirects(FetchError):
    pass


class SizeMismatch(FetchError):
    pass


class IoError(FetchError, OSError):
    pass


class RasterizerNotFound(FetchError):
    pass


class RasterizerFailed(FetchError):
    def __init__(self, returncode: int, stderr: str):
        super().__init__(f"rasterizer exited with status {returncode}: {stderr.strip()[:500]}")
        self.returncode = returncode
        self.stderr = stderr


class NoPagesProduced(FetchError):
    pass


@dataclass
class SourceConfig:
    index_url: str
    name: str = "epaper"
    link_class: str = "pdf"
    download_dir: str = "downloads"
    poll_interval: int = 500  # ms
    timeout: int = 30000  # ms
    user_agent: str = "tenderscan/0.1 (+notice extraction)"
    delay: int = 0  # ms between requests to the same host

    def __post_init__(self):
        if not self.timeout > self.poll_interval > 0:
            raise ValueError("need timeout > poll_interval > 0")


@dataclass
class DownloadRecord:
    url: str
    path: str
    size: int
    sha256: str
    fetched_at: str
    status: int

    def as_dict(self) -> dict:
        return asdict(self)


_host_locks: dict = {}
_host_locks_guard = threading.Lock()


def _host_lock(url: str) -> threading.Lock:
    host = urlparse(url).netloc
    with _host_locks_guard:
        return _host_locks.setdefault(host, threading.Lock())


def _is_file_url(url: str) -> bool:
    return urlparse(url).scheme == "file"


def _file_path(url: str) -> Path:
    return Path(url2pathname(urlparse(url).path))


def _session(cfg: SourceConfig) -> requests.Session:
    s = requests.Session()
    s.max_redirects = MAX_REDIRECTS
    s.headers["User-Agent"] = cfg.user_agent
    s.headers["Accept-Encoding"] = "identity"
    return s


def _get(cfg: SourceConfig, url: str, stream: bool = False) -> requests.Response:
    timeout = cfg.timeout / 1000.0
    with _host_lock(url):
        if cfg.delay:
            time.sleep(cfg.delay / 1000.0)
        try:
            resp = _session(cfg).get(url, timeout=timeout, stream=stream)
        except requests.exceptions.TooManyRedirects as exc:
            raise TooManyRedirects(f"more than {MAX_REDIRECTS} redirects for {url}") from exc
        except requests.exceptions.Timeout as exc:
            raise Timeout(f"no response from {url} within {timeout:.1f}s") from exc
        except requests.exceptions.RequestException as exc:
            raise FetchError(f"request to {url} failed: {exc}") from exc
    if resp.status_code != 200:
        resp.close()
        raise HttpError(resp.status_code, url)
    return resp


def fetch_index(cfg: SourceConfig) -> str:
    """Body of the source's index page."""
    if _is_file_url(cfg.index_url):
        try:
            return _file_path(cfg.index_url).read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            raise IoError(str(exc)) from exc
    resp = _get(cfg, cfg.index_url)
    return resp.text


class _LinkParser(HTMLParser):
    def __init__(self, link_class: str):
        super().__init__(convert_charrefs=True)
        self.link_class = link_class
        self.hrefs: List[str] = []
        self._open_tag: Optional[str] = None
        self._depth = 0

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        href = attrs.get("href")
        classes = (attrs.get("class") or "").split()
        if self._open_tag is not None:
            if href:
                self.hrefs.append(href)
                self._open_tag = None
            elif tag == self._open_tag:
                self._depth += 1
            return
        if self.link_class in classes:
            if href:
                self.hrefs.append(href)
            else:
                # the link may sit on a child element
                self._open_tag, self._depth = tag, 1

    def handle_endtag(self, tag):
        if self._open_tag is not None and tag == self._open_tag:
            self._depth -= 1
            if self._depth == 0:
                self._open_tag = None


def extract_pdf_links(html: str, link_class: str = "pdf", base_url: str = "") -> List[str]:
    """Absolute hrefs of elements whose class list contains ``link_class``.

    An element without its own ``href`` contributes the first ``href`` found
    among its descendants. Order follows the document; repeats are dropped.
    """
    parser = _LinkParser(link_class)
    try:
        parser.feed(html)
        parser.close()
    except Exception:  # malformed markup
        log.warning("could not parse index HTML", exc_info=True)
        return []
    out, seen = [], set()
    for href in parser.hrefs:
        url = urljoin(base_url, href.strip())
        if url not in seen:
            seen.add(url)
            out.append(url)
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


def _target_name(url: str) -> str:
    name = unquote(Path(urlparse(url).path).name)
    name = re.sub(r"[^\w.\-]+", "_", name).strip("._")
    return name or "download.pdf"


def download_dir_for(cfg: SourceConfig, date: Optional[str] = None) -> Path:
    date = date or dt.date.today().isoformat()
    return Path(cfg.download_dir) / cfg.name / date


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _reuse(final: Path, sidecar: Path, url: str) -> Optional[DownloadRecord]:
    if not (final.exists() and sidecar.exists()):
        return None
    try:
        rec = DownloadRecord(**json.loads(sidecar.read_text()))
    except (ValueError, TypeError):
        return None
    if rec.url != url or rec.size != final.stat().st_size or rec.sha256 != sha256_file(final):
        return None
    return rec


def _wait_until_stable(path: Path, poll: float, deadline: float) -> None:
    """Block until the file size is unchanged across two consecutive polls."""
    last = path.stat().st_size
    while True:
        if time.monotonic() > deadline:
            raise Timeout(f"{path} kept changing size")
        time.sleep(poll)
        size = path.stat().st_size
        if size == last:
            return
        last = size


def download_file(url: str, cfg: SourceConfig, date: Optional[str] = None) -> DownloadRecord:
    """Fetch ``url`` into ``download_dir/<source>/<date>/`` and describe the result.

    An earlier download of the same URL whose bytes still match its recorded
    hash is returned as-is without touching the network.
    """
    dest = download_dir_for(cfg, date)
    try:
        dest.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {dest}: {exc}") from exc
    final = dest / _target_name(url)
    sidecar = final.with_name(final.name + ".json")
    part = final.with_name(final.name + ".part")

    rec = _reuse(final, sidecar, url)
    if rec is not None:
        log.info("reusing %s", final)
        return rec

    deadline = time.monotonic() + cfg.timeout / 1000.0
    digest = hashlib.sha256()
    received = 0
    expected = None
    status = 200
    try:
        if _is_file_url(url):
            with open(_file_path(url), "rb") as src, open(part, "wb") as out:
                for chunk in iter(lambda: src.read(CHUNK), b""):
                    out.write(chunk)
                    digest.update(chunk)
                    received += len(chunk)
        else:
            resp = _get(cfg, url, stream=True)
            status = resp.status_code
            cl = resp.headers.get("Content-Length")
            expected = int(cl) if cl and cl.isdigit() else None
            with resp, open(part, "wb") as out:
                try:
                    for chunk in resp.iter_content(CHUNK):
                        if time.monotonic() > deadline:
                            raise Timeout(f"download of {url} exceeded {cfg.timeout} ms")
                        out.write(chunk)
                        digest.update(chunk)
                        received += len(chunk)
                except (requests.exceptions.ChunkedEncodingError,
                        requests.exceptions.ConnectionError) as exc:
                    if expected is not None:
                        raise SizeMismatch(
                            f"{url}: connection closed after {received} of {expected} bytes"
                        ) from exc
                    raise FetchError(f"{url}: connection lost after {received} bytes") from exc
                except requests.exceptions.Timeout as exc:
                    raise Timeout(f"{url}: stalled after {received} bytes") from exc
                out.flush()
                os.fsync(out.fileno())
        if expected is not None and received != expected:
            raise SizeMismatch(f"{url}: got {received} bytes, Content-Length says {expected}")
        if expected is None:
            _wait_until_stable(part, cfg.poll_interval / 1000.0, deadline)
        os.replace(part, final)
    except OSError as exc:
        part.unlink(missing_ok=True)
        if isinstance(exc, FetchError):
            raise
        raise IoError(f"writing {final}: {exc}") from exc
    except BaseException:
        part.unlink(missing_ok=True)
        raise

    rec = DownloadRecord(url, str(final), final.stat().st_size, digest.hexdigest(), _now(), status)
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    tmp.write_text(json.dumps(rec.as_dict(), indent=2))
    os.replace(tmp, sidecar)
    return rec


def fetch_source(cfg: SourceConfig, date: Optional[str] = None) -> List[DownloadRecord]:
    html = fetch_index(cfg)
    links = extract_pdf_links(html, cfg.link_class, cfg.index_url)
    log.info("%s: %d pdf link(s)", cfg.name, len(links))
    return [download_file(url, cfg, date) for url in links]


def _page_number(path: Path) -> int:
    nums = re.findall(r"\d+", path.stem)
    return int(nums[-1]) if nums else -1


def rasterize_pdf(pdf_path, dpi: int = DEFAULT_DPI, out_dir=None,
                  command_template: str = DEFAULT_RASTERIZER, timeout: Optional[float] = 600) -> List[Path]:
    """Render every page with an external rasterizer into ``out_dir/page-NNN.png``.

    The command runs in a scratch directory; whatever images it writes are
    ordered by the last number in their names and renumbered from 0.
    """
    for key in ("{input}", "{outdir}", "{dpi}"):
        if key not in command_template:
            raise ValueError(f"rasterizer template needs a {key} placeholder")
    pdf_path = Path(pdf_path)
    out_dir = Path(out_dir) if out_dir is not None else pdf_path.with_suffix("")
    out_dir.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".raster-", dir=out_dir))
    try:
        cmd = build_command(command_template, input=str(pdf_path), outdir=str(scratch), dpi=int(dpi))
        try:
            proc = subprocess.run(cmd, capture_output=True, timeout=timeout)
        except FileNotFoundError as exc:
            raise RasterizerNotFound(f"rasterizer not found: {cmd[0]}") from exc
        except PermissionError as exc:
            raise RasterizerNotFound(f"rasterizer not runnable: {cmd[0]}") from exc
        if proc.returncode != 0:
            raise RasterizerFailed(proc.returncode, proc.stderr.decode("utf-8", "replace"))
        images = [p for p in scratch.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES]
        if not images:
            raise NoPagesProduced(f"rasterizer wrote no page images for {pdf_path}")
        images.sort(key=lambda p: (_page_number(p), p.name))
        pages = []
        for i, src in enumerate(images):
            dst = out_dir / f"page-{i:03d}.png"
            if src.suffix.lower() == ".png":
                os.replace(src, dst)
            else:
                Image.open(src).save(dst, format="PNG")
            pages.append(dst)
        return pages
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
