import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA, PY
from tenderscan.ocrfilter import (
    EmptyKeywordSet,
    EngineFailed,
    EngineNotFound,
    FileUnreadable,
    MalformedRow,
    OcrToken,
    format_conf,
    is_tender,
    load_keywords,
    normalize_token,
    parse_ocr_tsv,
    run_ocr,
    serialize_ocr_tsv,
)

HEADER = "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext\n"


def word(text, conf=95.0, n=1):
    return OcrToken(5, 1, 1, 1, 1, n, 0, 0, 10, 10, conf, text)


@pytest.mark.parametrize("name", ["tesseract_page.tsv", "header_only.tsv"])
def test_golden_files_reserialize_identically(name):
    raw = (DATA / name).read_text(encoding="utf-8")
    assert serialize_ocr_tsv(parse_ocr_tsv(raw)) == raw


def test_golden_file_tokens():
    tokens = parse_ocr_tsv((DATA / "tesseract_page.tsv").read_text(encoding="utf-8"))
    assert len(tokens) == 11
    assert sum(t.structural for t in tokens) == 5
    assert tokens[5] == OcrToken(5, 1, 1, 1, 1, 2, 120, 45, 80, 22, 96.5, "tender")
    assert tokens[8].text == "बोलपत्र।" and tokens[10].text == ""
    assert parse_ocr_tsv((DATA / "header_only.tsv").read_text()) == []


def test_single_row_without_header():
    row = "5\t1\t1\t1\t1\t2\t120\t45\t80\t22\t96.5\ttender"
    assert parse_ocr_tsv(row) == [OcrToken(5, 1, 1, 1, 1, 2, 120, 45, 80, 22, 96.5, "tender")]


def test_malformed_rows():
    with pytest.raises(MalformedRow) as err:
        parse_ocr_tsv(HEADER + "5\t1\t1\t1\t1\t2\t120\t45\t80\t22\t96.5\n")
    assert err.value.line_no == 2
    with pytest.raises(MalformedRow):
        parse_ocr_tsv("5\t1\t1\t1\t1\tx\t120\t45\t80\t22\t96.5\tt")
    with pytest.raises(MalformedRow):
        parse_ocr_tsv("5\t1\t1\t1\t1\t1\t120\t45\t80\t22\t101\tt")
    with pytest.raises(MalformedRow):
        parse_ocr_tsv("5\t1\t1\t1\t1\t1\t120\t45\t-8\t22\t50\tt")


def test_crlf_lines_accepted():
    tokens = parse_ocr_tsv(HEADER.replace("\n", "\r\n") + "5\t1\t1\t1\t1\t1\t0\t0\t1\t1\t90\tbid\r\n")
    assert tokens[0].text == "bid"


texts = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), max_size=12)
tokens_st = st.builds(
    OcrToken, st.integers(1, 5), st.integers(0, 9), st.integers(0, 9), st.integers(0, 9), st.integers(0, 9),
    st.integers(0, 9), st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 5000),
    st.one_of(st.just(-1.0), st.floats(0, 100, allow_nan=False), st.integers(0, 100).map(float)),
    texts.filter(lambda s: "\t" not in s and "\n" not in s and "\r" not in s),
)


@given(st.lists(tokens_st, max_size=8))
def test_roundtrip_property(tokens):
    assert parse_ocr_tsv(serialize_ocr_tsv(tokens)) == tokens


def test_format_conf():
    assert format_conf(96.0) == "96" and format_conf(-1) == "-1" and format_conf(96.5) == "96.5"


def test_normalize_examples():
    assert normalize_token("Tender,") == "tender"
    assert normalize_token("बोलपत्र") == "बोलपत्र"
    assert normalize_token("(BID)") == "bid"
    assert normalize_token("बोलपत्र।") == "बोलपत्र"
    assert normalize_token("  ") == ""
    assert normalize_token("e-tender") == "e-tender"


def test_keyword_file(tmp_path):
    kw = load_keywords(DATA / "keywords_mixed.txt")
    assert kw == frozenset({"tender", "बोलपत्र"})
    p = tmp_path / "c.txt"
    p.write_text("# only\n\n# comments\n")
    with pytest.raises(EmptyKeywordSet):
        load_keywords(p)
    with pytest.raises(FileUnreadable):
        load_keywords(tmp_path / "missing.txt")
    p.write_bytes(b"\xff\xfe\xfa")
    with pytest.raises(FileUnreadable):
        load_keywords(p)


def test_is_tender_examples():
    toks = [word("tender"), word("notice"), word("bid")]
    d = is_tender(toks, {"tender", "bid", "बोलपत्र"}, min_common=2)
    assert d.is_tender and d.matched == {"tender", "bid"} and d.common_count == 2
    d = is_tender([], {"tender"})
    assert not d.is_tender and d.common_count == 0
    with pytest.raises(EmptyKeywordSet):
        is_tender(toks, set())


def test_is_tender_ignores_structural_and_low_confidence():
    toks = [OcrToken(4, 1, 1, 1, 1, 0, 0, 0, 1, 1, -1, "tender"), word("bid", conf=39.9), word("notice", conf=40)]
    d = is_tender(toks, {"tender", "bid", "notice"}, min_common=1)
    assert d.matched == {"notice"}
    assert is_tender(toks, {"bid"}, min_common=1, min_conf=0).matched == {"bid"}


def test_is_tender_on_golden_file():
    tokens = parse_ocr_tsv((DATA / "tesseract_page.tsv").read_text(encoding="utf-8"))
    kw = {"tender", "notice", "sealed", "bid", "बोलपत्र"}
    d = is_tender(tokens, kw)
    # "(bid)" has conf 12 and drops below the default floor
    assert d.matched == {"tender", "notice", "sealed", "बोलपत्र"} and d.is_tender


vocab = ["tender", "bid", "notice", "sealed", "contract", "sale", "rent", "बोलपत्र", "सूचना"]


def test_common_count_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        words = [str(w) for w in rng.choice(vocab, size=rng.integers(0, 12))]
        kws = {str(w) for w in rng.choice(vocab, size=rng.integers(1, 6))}
        toks = [word(w.upper() if rng.random() < 0.3 else w, conf=float(rng.integers(0, 100))) for w in words]
        d = is_tender(toks, kws, min_common=2)
        seen = []
        for t in toks:
            if t.conf < 40:
                continue
            for k in kws:
                if normalize_token(t.text) == k and k not in seen:
                    seen.append(k)
        assert d.common_count == len(seen)
        assert d.is_tender == (len(seen) >= 2)


@given(st.lists(st.sampled_from(vocab), max_size=10), st.sets(st.sampled_from(vocab), min_size=1),
       st.sampled_from(vocab), st.integers(1, 4))
def test_is_tender_monotone_and_order_free(words, kws, extra, k):
    toks = [word(w) for w in words]
    base = is_tender(toks, kws, k)
    if base.is_tender:
        assert is_tender(toks, kws | {extra}, k).is_tender
    assert is_tender(list(reversed(toks)) + toks, kws, k) == base


@given(st.lists(st.tuples(st.sampled_from(vocab), st.floats(0, 100)), max_size=10), st.floats(0, 100), st.floats(0, 100))
def test_raising_min_conf_never_increases_count(pairs, c1, c2):
    toks = [word(w, conf=c) for w, c in pairs]
    lo, hi = sorted((c1, c2))
    kws = set(vocab)
    assert is_tender(toks, kws, 1, hi).common_count <= is_tender(toks, kws, 1, lo).common_count


def test_run_ocr_with_canned_engine(tmp_path):
    img = tmp_path / "crop.png"
    img.write_bytes(b"fake")
    tokens = run_ocr(img, f"{PY} {DATA / 'canned_engine.py'} {{input}}")
    assert tokens == parse_ocr_tsv((DATA / "tesseract_page.tsv").read_text(encoding="utf-8"))


def test_run_ocr_errors(tmp_path):
    with pytest.raises(EngineNotFound):
        run_ocr(tmp_path / "x.png", "no-such-ocr-engine-xyz {input}")
    with pytest.raises(EngineFailed) as err:
        run_ocr(tmp_path / "missing.png", f"{PY} {DATA / 'canned_engine.py'} {{input}}")
    assert err.value.returncode == 1 and "cannot open" in err.value.stderr
    with pytest.raises(ValueError):
        run_ocr(tmp_path / "x.png", "tesseract stdout tsv")
