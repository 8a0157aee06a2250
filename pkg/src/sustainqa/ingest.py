"""Turn page images of reporting-standard PDFs into per-industry markdown.

The flow is: rasterize (external tool) -> per-page table detection ->
per-page extraction with a table-aware or text-only prompt -> assembly
into one markdown document per industry with page provenance spans.
"""

from __future__ import annotations

import hashlib
import json
import re
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .providers.base import LlmProvider, Message, ProviderRequest


class IngestError(Exception):
    pass


class TableShapeError(IngestError):
    """Extracted table markdown is not a well-formed pipe table of the
    expected column count."""


class NonContiguousPages(IngestError):
    pass


@dataclass(frozen=True)
class PageImage:
    page_number: int  # 1-based position in the source document
    png: bytes

    def digest(self) -> str:
        return hashlib.sha256(self.png).hexdigest()


@dataclass
class ExtractedTable:
    title: str
    kind: str  # sustainability | activity | other
    markdown: str


@dataclass
class PageExtract:
    page_number: int
    text_content: str
    tables: list[ExtractedTable] = field(default_factory=list)


@dataclass
class IndustryDoc:
    """One industry standard as markdown plus provenance.

    ``page_spans`` maps page number to the [start, end) character range
    that page contributed; spans are contiguous, ordered, and cover the
    whole document.
    """

    industry_id: str
    title: str
    markdown: str
    page_spans: dict[int, tuple[int, int]]
    tables: list[ExtractedTable] = field(default_factory=list)

    @classmethod
    def from_markdown(cls, industry_id: str, title: str, markdown: str) -> "IndustryDoc":
        """Wrap pre-assembled markdown as a single-page document."""
        if not markdown:
            raise IngestError("document markdown must be non-empty")
        return cls(industry_id, title, markdown, {1: (0, len(markdown))})

    def pages_for_range(self, start: int, end: int) -> list[int]:
        """Pages whose span overlaps [start, end)."""
        hit = sorted(p for p, (s, e) in self.page_spans.items() if s < end and start < e)
        if hit:
            return hit
        return [min(self.page_spans)] if self.page_spans else [1]


# --- extraction prompts -----------------------------------------------------

SUSTAINABILITY_COLUMNS = ["TOPIC", "METRIC", "CATEGORY", "UNIT OF MEASURE", "CODE"]
ACTIVITY_COLUMNS = ["ACTIVITY METRIC", "CATEGORY", "UNIT OF MEASURE", "CODE"]

DETECT_PROMPT = (
    "You are looking at one page of an industry reporting standard. "
    "Decide whether the page contains a data table, meaning content laid out "
    "in rows and columns. Respond as JSON."
)

DETECT_SCHEMA = {
    "type": "object",
    "properties": {"has_table": {"type": "boolean"}},
    "required": ["has_table"],
}

TEXT_PAGE_PROMPT = (
    "Transcribe this page of an industry reporting standard into markdown.\n"
    "Rules:\n"
    "- Preserve heading structure with #, ##, ### levels.\n"
    "- Skip the running header and footer of the page itself.\n"
    "- Omit any text that is struck through; keep underlined text as plain text.\n"
    "- Keep footnote text at the end of the page content.\n"
    "Return JSON with the markdown in text_content and the page number "
    "printed in the page footer in page_number."
)

TEXT_PAGE_SCHEMA = {
    "type": "object",
    "properties": {
        "text_content": {"type": "string"},
        "page_number": {"type": "integer", "minimum": 1},
    },
    "required": ["text_content", "page_number"],
}

TABLE_PAGE_PROMPT = (
    "This page of an industry reporting standard contains at least one data table.\n"
    "Extract every table as a markdown pipe table, keeping each row intact.\n"
    f"- Disclosure topic tables have exactly these columns: {' | '.join(SUSTAINABILITY_COLUMNS)}.\n"
    f"- Activity metric tables have exactly these columns: {' | '.join(ACTIVITY_COLUMNS)}.\n"
    "- Merge cells that span multiple printed lines into one cell.\n"
    "- Skip the running header and footer; omit struck-through text, keep underlined text.\n"
    "Also transcribe any prose on the page into text_content (empty string if none).\n"
    "Label each table kind as sustainability, activity, or other, and give its printed title.\n"
    "Return JSON."
)

TABLE_PAGE_SCHEMA = {
    "type": "object",
    "properties": {
        "report_title": {"type": "string"},
        "industry": {"type": "string"},
        "text_content": {"type": "string"},
        "page_number": {"type": "integer", "minimum": 1},
        "tables": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "title": {"type": "string"},
                    "kind": {"type": "string", "enum": ["sustainability", "activity", "other"]},
                    "markdown": {"type": "string"},
                },
                "required": ["title", "kind", "markdown"],
            },
        },
    },
    "required": ["text_content", "tables"],
}


# --- operations -------------------------------------------------------------

def rasterize_pdf(pdf_path: str | Path, out_dir: str | Path, zoom: float = 2.5, tool: str = "pdftoppm") -> list[Path]:
    """Rasterize a PDF to page PNGs with an external tool.

    Zoom is relative to the 72 dpi page box, so 2.5 renders at 180 dpi.
    """
    if shutil.which(tool) is None:
        raise IngestError(f"rasterizer {tool!r} not found on PATH")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dpi = str(int(round(72 * zoom)))
    cmd = [tool, "-png", "-r", dpi, str(pdf_path), str(out / "page")]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise IngestError(f"rasterizer failed: {proc.stderr.strip()[:400]}")
    pages = sorted(out.glob("page-*.png")) + sorted(out.glob("page*.png"))
    return sorted(set(pages))


def load_pages(pages_dir: str | Path) -> list[PageImage]:
    """Read page PNGs from a directory, ordering by the number embedded in
    each filename (page-3.png, page_003.png, 3.png all work)."""
    paths = sorted(Path(pages_dir).glob("*.png"))
    if not paths:
        raise IngestError(f"no .png pages found in {pages_dir}")
    pages = []
    for path in paths:
        m = re.search(r"(\d+)", path.stem)
        if not m:
            raise IngestError(f"cannot read a page number from {path.name}")
        pages.append(PageImage(int(m.group(1)), path.read_bytes()))
    pages.sort(key=lambda p: p.page_number)
    return pages


class PageExtractor:
    """Provider-backed page reader with per-page detection memoization."""

    def __init__(self, provider: LlmProvider, model_id: str) -> None:
        self.provider = provider
        self.model_id = model_id
        self._detect_memo: dict[str, bool] = {}

    def detect_table(self, page: PageImage) -> bool:
        key = page.digest()
        if key not in self._detect_memo:
            req = ProviderRequest(
                model_id=self.model_id,
                messages=(Message("user", DETECT_PROMPT, images=(page.png,)),),
                output_schema=DETECT_SCHEMA,
            )
            resp = self.provider.complete(req)
            self._detect_memo[key] = bool(resp.structured["has_table"])
        return self._detect_memo[key]

    def extract_page(self, page: PageImage, has_table: bool | None = None) -> PageExtract:
        if has_table is None:
            has_table = self.detect_table(page)
        if has_table:
            req = ProviderRequest(
                model_id=self.model_id,
                messages=(Message("user", TABLE_PAGE_PROMPT, images=(page.png,)),),
                output_schema=TABLE_PAGE_SCHEMA,
            )
            data = self.provider.complete(req).structured
            tables = []
            for t in data["tables"]:
                table = ExtractedTable(title=t["title"], kind=t["kind"], markdown=t["markdown"].strip())
                validate_table_markdown(table)
                tables.append(table)
            return PageExtract(page.page_number, data.get("text_content", ""), tables)
        req = ProviderRequest(
            model_id=self.model_id,
            messages=(Message("user", TEXT_PAGE_PROMPT, images=(page.png,)),),
            output_schema=TEXT_PAGE_SCHEMA,
        )
        data = self.provider.complete(req).structured
        return PageExtract(page.page_number, data["text_content"], [])


_EXPECTED_COLUMNS = {"sustainability": len(SUSTAINABILITY_COLUMNS), "activity": len(ACTIVITY_COLUMNS)}


def validate_table_markdown(table: ExtractedTable) -> None:
    """Check pipe-table shape: every line a |-row, constant column count,
    and the declared count for the known table kinds."""
    lines = [ln for ln in table.markdown.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise TableShapeError(f"table {table.title!r} has fewer than two rows")
    widths = set()
    for ln in lines:
        stripped = ln.strip()
        if not (stripped.startswith("|") and stripped.endswith("|")):
            raise TableShapeError(f"table {table.title!r} has a non-table line: {ln[:60]!r}")
        widths.add(len(stripped.strip("|").split("|")))
    if len(widths) != 1:
        raise TableShapeError(f"table {table.title!r} has ragged rows: widths {sorted(widths)}")
    expected = _EXPECTED_COLUMNS.get(table.kind)
    if expected is not None and widths.pop() != expected:
        raise TableShapeError(f"{table.kind} table {table.title!r} must have {expected} columns")


def assemble_markdown(pages: list[PageExtract], industry_id: str, title: str | None = None) -> IndustryDoc:
    """Fold page extracts into one document.

    Pages must be contiguous and ascending. Tables become standalone
    blocks (blank-line isolated) after the page's prose. Every character
    of the result is attributed to exactly one page span.
    """
    if not pages:
        raise IngestError("no pages to assemble")
    numbers = [p.page_number for p in pages]
    first = numbers[0]
    if numbers != list(range(first, first + len(numbers))):
        raise NonContiguousPages(f"page numbers are not contiguous: {numbers}")

    doc_title = title or industry_id
    parts: list[str] = []
    spans: dict[int, tuple[int, int]] = {}
    tables: list[ExtractedTable] = []
    cursor = 0
    for i, page in enumerate(pages):
        blocks: list[str] = []
        if i == 0:
            blocks.append(f"# {doc_title}")
        prose = page.text_content.strip()
        if prose:
            blocks.append(prose)
        for table in page.tables:
            validate_table_markdown(table)
            blocks.append(f"**{table.title}**")
            blocks.append(table.markdown.strip())
            tables.append(table)
        piece = "\n\n".join(blocks)
        if i < len(pages) - 1:
            piece += "\n\n"
        parts.append(piece)
        spans[page.page_number] = (cursor, cursor + len(piece))
        cursor += len(piece)
    markdown = "".join(parts)
    if not markdown.strip():
        raise IngestError("assembled document is empty")
    return IndustryDoc(industry_id, doc_title, markdown, spans, tables)


def ingest_pages(provider: LlmProvider, model_id: str, pages: list[PageImage], industry_id: str, title: str | None = None) -> IndustryDoc:
    extractor = PageExtractor(provider, model_id)
    extracts = [extractor.extract_page(p) for p in pages]
    return assemble_markdown(extracts, industry_id, title)


# --- persistence ------------------------------------------------------------

def save_doc(doc: IndustryDoc, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md_path = out / f"{doc.industry_id}.md"
    md_path.write_text(doc.markdown, encoding="utf-8")
    sidecar = {
        "industry_id": doc.industry_id,
        "title": doc.title,
        "page_spans": {str(k): list(v) for k, v in sorted(doc.page_spans.items())},
        "tables": [{"title": t.title, "kind": t.kind, "markdown": t.markdown} for t in doc.tables],
    }
    (out / f"{doc.industry_id}.json").write_text(
        json.dumps(sidecar, indent=2, ensure_ascii=False), encoding="utf-8"
    )
    return md_path


def load_doc(docs_dir: str | Path, industry_id: str) -> IndustryDoc:
    base = Path(docs_dir)
    markdown = (base / f"{industry_id}.md").read_text(encoding="utf-8")
    sidecar = json.loads((base / f"{industry_id}.json").read_text(encoding="utf-8"))
    return IndustryDoc(
        industry_id=sidecar["industry_id"],
        title=sidecar["title"],
        markdown=markdown,
        page_spans={int(k): (v[0], v[1]) for k, v in sidecar["page_spans"].items()},
        tables=[ExtractedTable(**t) for t in sidecar.get("tables", [])],
    )


def load_docs(docs_dir: str | Path) -> list[IndustryDoc]:
    base = Path(docs_dir)
    ids = sorted(p.stem for p in base.glob("*.md"))
    if not ids:
        raise IngestError(f"no documents found in {docs_dir}")
    return [load_doc(base, industry_id) for industry_id in ids]
