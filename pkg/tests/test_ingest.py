"""Page extraction, table shape checks, and document assembly."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sustainqa.ingest import (
    ExtractedTable,
    IndustryDoc,
    IngestError,
    NonContiguousPages,
    PageExtract,
    PageExtractor,
    PageImage,
    TableShapeError,
    assemble_markdown,
    ingest_pages,
    load_doc,
    load_docs,
    load_pages,
    save_doc,
    validate_table_markdown,
)
from sustainqa.providers.mock import MockProvider

GOOD_SUST = (
    "| TOPIC | METRIC | CATEGORY | UNIT OF MEASURE | CODE |\n"
    "| --- | --- | --- | --- | --- |\n"
    "| Fuel | Total fuel consumed | Quantitative | Gigajoules | XX-YY-110a.1 |"
)

GOOD_ACT = (
    "| ACTIVITY METRIC | CATEGORY | UNIT OF MEASURE | CODE |\n"
    "| --- | --- | --- | --- |\n"
    "| Revenue passenger kilometres | Quantitative | RPK | XX-YY-000.A |"
)


# --- table validation -------------------------------------------------------


def test_valid_tables_pass():
    validate_table_markdown(ExtractedTable("t", "sustainability", GOOD_SUST))
    validate_table_markdown(ExtractedTable("t", "activity", GOOD_ACT))


def test_table_too_short():
    with pytest.raises(TableShapeError):
        validate_table_markdown(ExtractedTable("t", "other", "| just a header |"))


def test_table_non_pipe_line():
    bad = GOOD_SUST + "\nplain prose line"
    with pytest.raises(TableShapeError, match="non-table line"):
        validate_table_markdown(ExtractedTable("t", "sustainability", bad))


def test_table_ragged_rows():
    bad = GOOD_ACT + "\n| one | two |"
    with pytest.raises(TableShapeError, match="ragged"):
        validate_table_markdown(ExtractedTable("t", "activity", bad))


def test_table_wrong_column_count_for_kind():
    # a five-column table labelled activity (expects four)
    with pytest.raises(TableShapeError, match="must have 4 columns"):
        validate_table_markdown(ExtractedTable("t", "activity", GOOD_SUST))
    # unknown kinds only need internal consistency
    validate_table_markdown(ExtractedTable("t", "other", GOOD_SUST))


# --- assembly ---------------------------------------------------------------


def make_pages():
    return [
        PageExtract(1, "Intro prose."),
        PageExtract(2, "Topic summary.", [ExtractedTable("Table 1", "sustainability", GOOD_SUST)]),
        PageExtract(3, "", [ExtractedTable("Table 2", "activity", GOOD_ACT)]),
    ]


def test_assemble_spans_partition_the_document():
    doc = assemble_markdown(make_pages(), "air", "Airlines")
    assert doc.markdown.startswith("# Airlines\n\nIntro prose.")
    spans = [doc.page_spans[p] for p in sorted(doc.page_spans)]
    assert spans[0][0] == 0
    assert spans[-1][1] == len(doc.markdown)
    for (_, e1), (s2, _) in zip(spans, spans[1:]):
        assert e1 == s2
    # every table row arrives intact
    assert GOOD_SUST in doc.markdown
    assert GOOD_ACT in doc.markdown
    assert [t.title for t in doc.tables] == ["Table 1", "Table 2"]


def test_assemble_rejects_gaps_and_disorder():
    pages = [PageExtract(1, "a"), PageExtract(3, "b")]
    with pytest.raises(NonContiguousPages):
        assemble_markdown(pages, "x")
    with pytest.raises(NonContiguousPages):
        assemble_markdown([PageExtract(2, "a"), PageExtract(1, "b")], "x")
    with pytest.raises(IngestError):
        assemble_markdown([], "x")


def test_assemble_may_start_past_page_one():
    doc = assemble_markdown([PageExtract(4, "later"), PageExtract(5, "pages")], "x")
    assert sorted(doc.page_spans) == [4, 5]


def test_pages_for_range():
    doc = assemble_markdown(make_pages(), "air")
    s2, e2 = doc.page_spans[2]
    assert doc.pages_for_range(s2, s2 + 1) == [2]
    assert doc.pages_for_range(0, len(doc.markdown)) == [1, 2, 3]
    # boundary: a range starting exactly at a span edge belongs to the next page
    assert doc.pages_for_range(e2, e2 + 1) == [3]
    # degenerate empty overlap falls back to the first page
    assert doc.pages_for_range(10**9, 10**9 + 1) == [1]


@settings(max_examples=30, deadline=None)
@given(
    texts=st.lists(st.text(alphabet="ab \n", min_size=0, max_size=12), min_size=1, max_size=6),
    first=st.integers(min_value=1, max_value=9),
)
def test_assemble_span_invariants_hold_for_fuzzed_prose(texts, first):
    pages = [PageExtract(first + i, t) for i, t in enumerate(texts)]
    doc = assemble_markdown(pages, "doc")
    spans = [doc.page_spans[p] for p in sorted(doc.page_spans)]
    assert spans[0][0] == 0 and spans[-1][1] == len(doc.markdown)
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    assert all(s <= e for s, e in spans)


def test_from_markdown_single_span():
    doc = IndustryDoc.from_markdown("x", "X", "# X\n\nbody")
    assert doc.page_spans == {1: (0, len(doc.markdown))}
    with pytest.raises(IngestError):
        IndustryDoc.from_markdown("x", "X", "")


# --- extractor --------------------------------------------------------------


def scripted_extractor():
    provider = MockProvider(dimension=8)
    provider.script(
        lambda r: "Decide whether the page contains" in r.last_user_text(),
        lambda r: {"has_table": r.messages[-1].images[0] == b"png-table"},
    )
    provider.script(
        "Transcribe this page",
        {"text_content": "Plain prose page.", "page_number": 1},
    )
    provider.script(
        "contains at least one data table",
        {
            "text_content": "Around the table.",
            "tables": [{"title": "T", "kind": "sustainability", "markdown": GOOD_SUST}],
        },
    )
    return provider, PageExtractor(provider, "vision")


def test_extract_text_page():
    provider, extractor = scripted_extractor()
    extract = extractor.extract_page(PageImage(1, b"png-text"))
    assert extract.text_content == "Plain prose page."
    assert extract.tables == []


def test_extract_table_page_validates_tables():
    provider, extractor = scripted_extractor()
    extract = extractor.extract_page(PageImage(2, b"png-table"))
    assert extract.tables[0].kind == "sustainability"
    assert extract.text_content == "Around the table."


def test_extraction_rejects_malformed_table():
    provider = MockProvider()
    provider.script(
        "contains at least one data table",
        {"text_content": "", "tables": [{"title": "T", "kind": "activity", "markdown": GOOD_SUST}]},
    )
    extractor = PageExtractor(provider, "vision")
    with pytest.raises(TableShapeError):
        extractor.extract_page(PageImage(1, b"x"), has_table=True)


def test_detection_is_memoized_per_image():
    provider, extractor = scripted_extractor()
    page = PageImage(1, b"png-text")
    assert extractor.detect_table(page) is False
    assert extractor.detect_table(page) is False
    detect_calls = [c for c in provider.calls if "Decide whether" in c.last_user_text()]
    assert len(detect_calls) == 1


def test_ingest_pages_end_to_end():
    provider, _ = scripted_extractor()
    pages = [PageImage(1, b"png-text"), PageImage(2, b"png-table")]
    doc = ingest_pages(provider, "vision", pages, "air", "Airlines Standard")
    assert doc.industry_id == "air"
    assert doc.markdown.startswith("# Airlines Standard")
    assert "Plain prose page." in doc.markdown
    assert GOOD_SUST in doc.markdown
    assert doc.pages_for_range(doc.markdown.index("| Fuel"), len(doc.markdown)) == [2]


# --- persistence ------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    doc = assemble_markdown(make_pages(), "air", "Airlines")
    save_doc(doc, tmp_path)
    back = load_doc(tmp_path, "air")
    assert back.markdown == doc.markdown
    assert back.page_spans == doc.page_spans
    assert back.title == doc.title
    assert [t.markdown for t in back.tables] == [t.markdown for t in doc.tables]


def test_load_docs_sorted(tmp_path):
    for industry in ("metals", "airlines", "chemicals"):
        save_doc(IndustryDoc.from_markdown(industry, industry, f"# {industry}\n\nbody"), tmp_path)
    docs = load_docs(tmp_path)
    assert [d.industry_id for d in docs] == ["airlines", "chemicals", "metals"]
    with pytest.raises(IngestError):
        load_docs(tmp_path / "missing")


def test_load_pages_orders_by_filename_number(tmp_path):
    (tmp_path / "page-10.png").write_bytes(b"ten")
    (tmp_path / "page-2.png").write_bytes(b"two")
    (tmp_path / "page-1.png").write_bytes(b"one")
    pages = load_pages(tmp_path)
    assert [p.page_number for p in pages] == [1, 2, 10]
    assert pages[2].png == b"ten"
    with pytest.raises(IngestError):
        load_pages(tmp_path / "empty")
