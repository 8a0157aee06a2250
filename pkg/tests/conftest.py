"""Shared fixtures: a small three-industry corpus, a fuzzed-document
generator, and provider helpers."""

from __future__ import annotations

import random

import pytest

from sustainqa.ingest import ExtractedTable, IndustryDoc, PageExtract, assemble_markdown, save_doc
from sustainqa.providers.mock import MockProvider

AIRLINES_SUST_TABLE = "\n".join(
    [
        "| TOPIC | METRIC | CATEGORY | UNIT OF MEASURE | CODE |",
        "| --- | --- | --- | --- | --- |",
        "| Greenhouse Gas Emissions | Gross global Scope 1 emissions | Quantitative | Metric tons (t) CO2-e | TR-AL-110a.1 |",
        "| Greenhouse Gas Emissions | Total fuel consumed, percentage alternative | Quantitative | Gigajoules (GJ), Percentage (%) | TR-AL-110a.3 |",
        "| Labor Practices | Percentage of active workforce under collective agreements | Quantitative | Percentage (%) | TR-AL-310a.1 |",
    ]
)

AIRLINES_ACT_TABLE = "\n".join(
    [
        "| ACTIVITY METRIC | CATEGORY | UNIT OF MEASURE | CODE |",
        "| --- | --- | --- | --- |",
        "| Available seat kilometers (ASK) | Quantitative | ASK | TR-AL-000.A |",
        "| Revenue passenger kilometers (RPK) | Quantitative | RPK | TR-AL-000.C |",
    ]
)

METALS_SUST_TABLE = "\n".join(
    [
        "| TOPIC | METRIC | CATEGORY | UNIT OF MEASURE | CODE |",
        "| --- | --- | --- | --- | --- |",
        "| Water Management | Total fresh water withdrawn | Quantitative | Thousand cubic meters (m3) | EM-MM-140a.1 |",
        "| Waste Management | Total weight of tailings produced | Quantitative | Metric tons (t) | EM-MM-150a.1 |",
    ]
)

METALS_ACT_TABLE = "\n".join(
    [
        "| ACTIVITY METRIC | CATEGORY | UNIT OF MEASURE | CODE |",
        "| --- | --- | --- | --- |",
        "| Production of metal ores | Quantitative | Metric tons (t) saleable | EM-MM-000.A |",
    ]
)

CHEMS_SUST_TABLE = "\n".join(
    [
        "| TOPIC | METRIC | CATEGORY | UNIT OF MEASURE | CODE |",
        "| --- | --- | --- | --- | --- |",
        "| Air Quality | Air emissions of NOx excluding N2O | Quantitative | Metric tons (t) | RT-CH-120a.1 |",
        "| Energy Management | Total energy consumed | Quantitative | Gigajoules (GJ) | RT-CH-130a.1 |",
    ]
)

CHEMS_ACT_TABLE = "\n".join(
    [
        "| ACTIVITY METRIC | CATEGORY | UNIT OF MEASURE | CODE |",
        "| --- | --- | --- | --- |",
        "| Production by reportable segment | Quantitative | Cubic meters (m3) or metric tons (t) | RT-CH-000.A |",
    ]
)


def _doc(industry_id: str, title: str, intro: str, sust: str, act: str) -> IndustryDoc:
    pages = [
        PageExtract(
            1,
            f"{intro}\n\n## Disclosure Topics\n\nThe tables on the following page "
            "define each sustainability disclosure topic, its metrics, and the "
            "activity metrics used for normalization.",
        ),
        PageExtract(
            2,
            "## Sustainability Disclosure Topics & Metrics",
            [
                ExtractedTable("Table 1. Sustainability Disclosure Topics & Metrics", "sustainability", sust),
                ExtractedTable("Table 2. Activity Metrics", "activity", act),
            ],
        ),
    ]
    return assemble_markdown(pages, industry_id, title)


def make_docs() -> list[IndustryDoc]:
    return [
        _doc(
            "airlines",
            "Airlines",
            "Operators of this sector provide scheduled passenger air transport. "
            "Fuel is the dominant operating cost and the main source of greenhouse "
            "gas emissions, so fuel efficiency and fleet management drive the "
            "sustainability profile of the sector.",
            AIRLINES_SUST_TABLE,
            AIRLINES_ACT_TABLE,
        ),
        _doc(
            "metals",
            "Metals & Mining",
            "Companies in this sector extract and process metal ores. Water "
            "stewardship, tailings storage, and land disturbance dominate the "
            "environmental footprint of extraction operations.",
            METALS_SUST_TABLE,
            METALS_ACT_TABLE,
        ),
        _doc(
            "chemicals",
            "Chemicals",
            "Producers of basic and specialty chemical products. Energy intensity "
            "and process air emissions are the primary operational sustainability "
            "drivers for chemical manufacturing plants.",
            CHEMS_SUST_TABLE,
            CHEMS_ACT_TABLE,
        ),
    ]


_FUZZ_WORDS = (
    "emissions fuel water energy waste metric topic operations disclosure "
    "percentage quantitative fleet plant tailings air ore segment total gross "
    "scope report management efficiency consumption capacity standard"
).split()


def fuzz_doc(rng: random.Random, industry: str = "fuzz") -> IndustryDoc:
    """Random multi-page document mixing prose, headings, blank lines, and
    well-formed pipe tables. Deterministic for a seeded rng."""

    def words(n):
        return " ".join(rng.choice(_FUZZ_WORDS) for _ in range(n))

    def sentence():
        return words(rng.randint(3, 14)).capitalize() + rng.choice([".", ".", "!", "?"])

    def table(kind):
        header, cols = (
            ("| TOPIC | METRIC | CATEGORY | UNIT OF MEASURE | CODE |", 5)
            if kind == "sustainability"
            else ("| ACTIVITY METRIC | CATEGORY | UNIT OF MEASURE | CODE |", 4)
        )
        lines = [header, "|" + " --- |" * cols]
        for r in range(rng.randint(1, 4)):
            cells = [words(rng.randint(1, 4)) for _ in range(cols - 1)] + [f"ZZ-FZ-{r}{rng.randint(0, 9)}0a.{r + 1}"]
            lines.append("| " + " | ".join(cells) + " |")
        return ExtractedTable(f"Table {kind}", kind, "\n".join(lines))

    pages = []
    for page_no in range(1, rng.randint(2, 5)):
        blocks = []
        for _ in range(rng.randint(1, 5)):
            roll = rng.random()
            if roll < 0.2:
                blocks.append(f"{'#' * rng.randint(1, 4)} {words(rng.randint(1, 5)).title()}")
            else:
                blocks.append(" ".join(sentence() for _ in range(rng.randint(1, 30))))
        tables = [table(rng.choice(["sustainability", "activity"])) for _ in range(rng.randint(0, 2))]
        pages.append(PageExtract(page_no, "\n\n".join(blocks), tables))
    return assemble_markdown(pages, industry, f"Fuzz {industry}")


@pytest.fixture()
def docs() -> list[IndustryDoc]:
    return make_docs()


@pytest.fixture()
def doc_map(docs) -> dict[str, IndustryDoc]:
    return {d.industry_id: d for d in docs}


@pytest.fixture()
def docs_dir(tmp_path, docs):
    out = tmp_path / "docs"
    for doc in docs:
        save_doc(doc, out)
    return out


@pytest.fixture()
def mock_provider() -> MockProvider:
    return MockProvider(dimension=32)
