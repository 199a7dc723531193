"""OCR word tables and the keyword-intersection tender rule.

The OCR engine is an external process that prints a 12-column TSV table
(``level page_num block_num par_num line_num word_num left top width height
conf text``) on stdout, the layout Tesseract produces with its ``tsv``
output mode.
"""
from __future__ import annotations

import shlex
import subprocess
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Sequence

COLUMNS = (
    "level", "page_num", "block_num", "par_num", "line_num", "word_num",
    "left", "top", "width", "height", "conf", "text",
)
INT_COLUMNS = COLUMNS[:10]

DEFAULT_MIN_COMMON = 3
DEFAULT_MIN_CONF = 40.0


class OcrError(Exception):
    pass


class MalformedRow(OcrError, ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyKeywordSet(OcrError, ValueError):
    pass


class FileUnreadable(OcrError, OSError):
    pass


class EngineNotFound(OcrError):
    pass


class EngineFailed(OcrError):
    def __init__(self, returncode: int, stderr: str):
        super().__init__(f"OCR engine exited with status {returncode}: {stderr.strip()[:500]}")
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class OcrToken:
    level: int
    page_num: int
    block_num: int
    par_num: int
    line_num: int
    word_num: int
    left: int
    top: int
    width: int
    height: int
    conf: float
    text: str

    @property
    def structural(self) -> bool:
        """Page/block/paragraph/line rows carry ``conf == -1`` and no word."""
        return self.conf == -1


@dataclass(frozen=True)
class TenderDecision:
    is_tender: bool
    matched: FrozenSet[str]
    common_count: int
    min_common: int


def _parse_int(value: str, name: str, line_no: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedRow(line_no, f"{name}={value!r} is not an integer") from None


def _parse_conf(value: str, line_no: int) -> float:
    try:
        conf = float(value)
    except ValueError:
        raise MalformedRow(line_no, f"conf={value!r} is not a number") from None
    if not -1 <= conf <= 100:
        raise MalformedRow(line_no, f"conf={value!r} outside [-1, 100]")
    return conf


def parse_ocr_tsv(text: str) -> List[OcrToken]:
    """Parse an OCR TSV table. The header row is optional."""
    tokens = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line:
            continue
        cells = line.split("\t")
        if tuple(cells) == COLUMNS:
            continue
        if len(cells) != len(COLUMNS):
            raise MalformedRow(line_no, f"expected {len(COLUMNS)} columns, got {len(cells)}")
        ints = [_parse_int(v, name, line_no) for v, name in zip(cells[:10], INT_COLUMNS)]
        if ints[8] < 0 or ints[9] < 0:
            raise MalformedRow(line_no, "negative width or height")
        tokens.append(OcrToken(*ints, conf=_parse_conf(cells[10], line_no), text=cells[11]))
    return tokens


def format_conf(conf: float) -> str:
    return str(int(conf)) if float(conf).is_integer() else repr(float(conf))


def serialize_ocr_tsv(tokens: Iterable[OcrToken]) -> str:
    lines = ["\t".join(COLUMNS)]
    for t in tokens:
        ints = [getattr(t, name) for name in INT_COLUMNS]
        lines.append("\t".join([*map(str, ints), format_conf(t.conf), t.text]))
    return "\n".join(lines) + "\n"


def _is_edge_junk(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch)[0] in "PS"


def normalize_token(s: str) -> str:
    """Case-fold and strip surrounding punctuation, symbols and whitespace.

    Devanagari has no case, so Nepali words pass through apart from the
    trimming (a trailing danda is punctuation and is removed).
    """
    s = s.casefold()
    start, end = 0, len(s)
    while start < end and _is_edge_junk(s[start]):
        start += 1
    while end > start and _is_edge_junk(s[end - 1]):
        end -= 1
    return s[start:end]


def load_keywords(path) -> FrozenSet[str]:
    """One keyword per line; blank lines and ``#`` comments are skipped."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read keyword file {path}: {exc}") from exc
    words = set()
    for line in raw.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        word = normalize_token(line)
        if word:
            words.add(word)
    if not words:
        raise EmptyKeywordSet(f"{path} contains no keywords")
    return frozenset(words)


def is_tender(
    tokens: Sequence[OcrToken],
    keywords: Iterable[str],
    min_common: int = DEFAULT_MIN_COMMON,
    min_conf: float = DEFAULT_MIN_CONF,
) -> TenderDecision:
    keywords = frozenset(keywords)
    if not keywords:
        raise EmptyKeywordSet("keyword set is empty")
    words = {
        normalize_token(t.text)
        for t in tokens
        if not t.structural and t.conf >= min_conf
    }
    words.discard("")
    matched = frozenset(words & keywords)
    return TenderDecision(
        is_tender=len(matched) >= min_common,
        matched=matched,
        common_count=len(matched),
        min_common=min_common,
    )


def build_command(template: str, **values) -> List[str]:
    """Split a command template shell-style and fill ``{placeholders}`` per argument."""
    return [part.format(**values) for part in shlex.split(template)]


def run_ocr(image_path, command_template: str, timeout: Optional[float] = 120.0) -> List[OcrToken]:
    """Run the external OCR engine on one image and parse its TSV output."""
    if "{input}" not in command_template:
        raise ValueError("OCR command template needs an {input} placeholder")
    cmd = build_command(command_template, input=str(image_path))
    try:
        proc = subprocess.run(cmd, capture_output=True, timeout=timeout)
    except FileNotFoundError as exc:
        raise EngineNotFound(f"OCR executable not found: {cmd[0]}") from exc
    except PermissionError as exc:
        raise EngineNotFound(f"OCR executable not runnable: {cmd[0]}") from exc
    stderr = proc.stderr.decode("utf-8", "replace")
    if proc.returncode != 0:
        raise EngineFailed(proc.returncode, stderr)
    return parse_ocr_tsv(proc.stdout.decode("utf-8"))
