"""Command-line interface.

Batch pipeline stages (ingest, chunk, index build, generate, evaluate,
postprocess, export-ft, bench) run in-process against the configured
provider. Query-time commands (ask, classify predict) can either run
in-process or act as thin clients against a running service via
--server.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import httpx

from . import bench as bench_mod
from . import chunking as chunking_mod
from . import ingest as ingest_mod
from .classifier import (
    MlpConfig,
    industry_descriptions,
    llm_classify,
    load_model,
    load_training_rows,
    mlp_predict,
    save_model,
    train_from_texts,
)
from .config import AppConfig, load_config, make_provider
from .evaluation import Evaluator, save_scores
from .generation import (
    ALL_TYPES,
    GenerationPlan,
    QaType,
    load_dataset,
    run_generation_pipeline,
    save_audits,
    save_dataset,
)
from .indexing import VectorIndex, build_index
from .pipelines import AnswerEngine, export_finetune_dataset
from .postprocess import PostProcessor, SimilarityFilter


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="YAML/JSON config file.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """QA dataset construction and querying for sustainability reporting standards."""
    ctx.obj = load_config(config_path)


def _provider(cfg: AppConfig):
    return make_provider(cfg)


def _load_docs_map(docs_dir: str) -> dict[str, ingest_mod.IndustryDoc]:
    return {d.industry_id: d for d in ingest_mod.load_docs(docs_dir)}


def _build_engine(cfg: AppConfig, index_dir: str | None, docs_dir: str | None, variant: str | None) -> AnswerEngine:
    provider = _provider(cfg)
    index = VectorIndex.load(index_dir) if index_dir else None
    docs = _load_docs_map(docs_dir) if docs_dir else {}
    pipeline_cfg = cfg.pipeline
    if variant:
        pipeline_cfg = replace(pipeline_cfg, variant=variant)
    return AnswerEngine(provider, cfg.models, index, docs, pipeline_cfg)


# --- ingest -----------------------------------------------------------------

@main.command()
@click.option("--pages", "pages_dir", type=click.Path(exists=True, file_okay=False), help="Directory of page PNGs.")
@click.option("--pdf", "pdf_path", type=click.Path(exists=True, dir_okay=False), help="Source PDF (rasterized first).")
@click.option("--zoom", type=float, default=2.5, show_default=True, help="Rasterization zoom over the 72 dpi page box.")
@click.option("--industry", required=True, help="Industry id, e.g. b61-airlines.")
@click.option("--title", default=None, help="Document title (defaults to the industry id).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def ingest(cfg: AppConfig, pages_dir: str | None, pdf_path: str | None, zoom: float, industry: str, title: str | None, out_dir: str) -> None:
    """Turn page images (or a PDF) into one markdown document."""
    if not pages_dir and not pdf_path:
        raise click.UsageError("provide --pages or --pdf")
    if pdf_path:
        pages_dir = str(Path(out_dir) / "_pages" / industry)
        ingest_mod.rasterize_pdf(pdf_path, pages_dir, zoom=zoom)
    pages = ingest_mod.load_pages(pages_dir)
    provider = _provider(cfg)
    doc = ingest_mod.ingest_pages(provider, cfg.models.extractor, pages, industry, title)
    path = ingest_mod.save_doc(doc, out_dir)
    click.echo(f"wrote {path} ({len(doc.markdown)} chars, {len(doc.page_spans)} pages)")


# --- chunk ------------------------------------------------------------------

@main.command()
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--strategy", type=click.Choice(chunking_mod.STRATEGIES), default="markdown", show_default=True)
@click.option("--level", type=int, default=2, show_default=True, help="Heading level for the markdown strategy.")
@click.option("--size", type=int, default=512, show_default=True, help="Window size for the window strategy.")
@click.option("--overlap", type=float, default=0.10, show_default=True, help="Window overlap fraction.")
@click.option("--threshold", type=float, default=0.5, show_default=True, help="Semantic boundary threshold.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_obj
def chunk(cfg: AppConfig, docs_dir: str, strategy: str, level: int, size: int, overlap: float, threshold: float, out_path: str) -> None:
    """Chunk every document in a directory into one JSONL file."""
    spec = chunking_mod.ChunkingSpec(
        strategy=strategy,
        window_size=size,
        window_overlap_fraction=overlap,
        semantic_threshold=threshold,
        markdown_heading_level=level,
    )
    embed_fn = None
    if strategy == "semantic":
        provider = _provider(cfg)
        embed_fn = provider.embed
    chunks = []
    for doc in ingest_mod.load_docs(docs_dir):
        chunks.extend(chunking_mod.chunk_document(doc, spec, embed_fn))
    chunking_mod.dump_chunks(chunks, out_path)
    click.echo(f"wrote {len(chunks)} chunks to {out_path}")


# --- index ------------------------------------------------------------------

@main.group()
def index() -> None:
    """Build or query a vector index."""


@index.command("build")
@click.option("--chunks", "chunks_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def index_build(cfg: AppConfig, chunks_path: str, out_dir: str) -> None:
    provider = _provider(cfg)
    chunks = chunking_mod.load_chunks(chunks_path)
    idx = build_index(provider, chunks)
    idx.save(out_dir)
    click.echo(f"indexed {len(idx)} chunks (dimension {idx.dimension}) into {out_dir}")


@index.command("query")
@click.option("--index", "index_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--q", "query_text", required=True)
@click.option("--retriever", type=click.Choice(["knn", "bm25", "hybrid", "mmr"]), default="knn", show_default=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--industries", default=None, help="Comma-separated industry filter.")
@click.option("--mmr-lambda", type=float, default=0.5, show_default=True)
@click.pass_obj
def index_query(cfg: AppConfig, index_dir: str, query_text: str, retriever: str, k: int, industries: str | None, mmr_lambda: float) -> None:
    provider = _provider(cfg)
    idx = VectorIndex.load(index_dir)
    flt = set(industries.split(",")) if industries else None
    if retriever == "bm25":
        results = idx.bm25(query_text, k, flt)
    else:
        vector = provider.embed([query_text])[0]
        if retriever == "knn":
            results = idx.knn(vector, k, flt)
        elif retriever == "hybrid":
            results = idx.hybrid(query_text, vector, k, flt)
        else:
            results = idx.mmr(vector, k, mmr_lambda, flt)
    for r in results:
        chunk_ = idx.chunk(r.chunk_id)
        click.echo(json.dumps({
            "rank": r.rank,
            "score": round(r.score, 6),
            "chunk_id": r.chunk_id,
            "industry": chunk_.metadata.industry,
            "text": chunk_.text[:160],
        }, ensure_ascii=False))


# --- generate ------------------------------------------------------------------

def _parse_types(spec_text: str | None) -> tuple[QaType, ...]:
    if not spec_text:
        return ALL_TYPES
    types = []
    for part in spec_text.split(","):
        span, hops, fmt = part.strip().split("/")
        types.append(QaType(span, hops, fmt))
    return tuple(types)


def _parse_pairs(spec_text: str | None) -> tuple[tuple[str, str], ...] | None:
    if not spec_text:
        return None
    pairs = []
    for part in spec_text.split(","):
        a, b = part.strip().split(":")
        pairs.append((a, b))
    return tuple(pairs)


@main.command()
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--types", "types_text", default=None, help="Comma-separated span/hops/format triples; default all eight.")
@click.option("--n", "n_per_type", type=int, default=None, help="Questions per type (default from config).")
@click.option("--method", type=click.Choice(["baseline", "cot", "cot_fewshot"]), default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pairs", "pairs_text", default=None, help="Cross-industry pairs a:b,c:d (default: model pairing).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def generate(cfg: AppConfig, docs_dir: str, types_text: str | None, n_per_type: int | None, method: str | None, temperature: float | None, seed: int | None, pairs_text: str | None, out_dir: str) -> None:
    """Generate a gated QA dataset (dataset, audits, and scores files)."""
    gen = cfg.generation
    plan = GenerationPlan(
        types=_parse_types(types_text),
        n_per_type=n_per_type if n_per_type is not None else gen.n_per_type,
        method=method or gen.method,
        temperature=temperature if temperature is not None else gen.temperature,
        thresholds=gen.thresholds(),
        similarity_threshold=gen.similarity_threshold,
        seed=seed if seed is not None else gen.seed,
        industry_pairs=_parse_pairs(pairs_text),
    )
    provider = _provider(cfg)
    docs = ingest_mod.load_docs(docs_dir)
    outcome = run_generation_pipeline(provider, cfg.models.generator, docs, plan)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(outcome.accepted, out / "dataset.jsonl")
    save_audits(outcome.audits, out / "audits.jsonl")
    save_scores(outcome.scores.values(), out / "scores.jsonl")
    click.echo(
        f"accepted {len(outcome.accepted)} of {len(outcome.audits)} generated questions; "
        f"artifacts in {out_dir}"
    )


# --- evaluate ------------------------------------------------------------------

@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_obj
def evaluate(cfg: AppConfig, dataset_path: str, docs_dir: str, out_path: str) -> None:
    """Judge an existing dataset and write per-question scores."""
    provider = _provider(cfg)
    docs = _load_docs_map(docs_dir)
    evaluator = Evaluator(provider, cfg.models.judge, docs)
    pairs = load_dataset(dataset_path)
    scores = [evaluator.evaluate(qa) for qa in pairs]
    save_scores(scores, out_path)
    excluded = sum(1 for s in scores if s.excluded)
    click.echo(f"scored {len(scores)} questions ({excluded} gate-excluded) into {out_path}")


# --- postprocess ------------------------------------------------------------------

@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--scores", "scores_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def postprocess(cfg: AppConfig, dataset_path: str, scores_path: str, docs_dir: str, out_dir: str) -> None:
    """Apply the post-generation gates to an evaluated dataset."""
    from .evaluation import load_scores

    provider = _provider(cfg)
    docs = _load_docs_map(docs_dir)
    evaluator = Evaluator(provider, cfg.models.judge, docs)
    post = PostProcessor(
        provider,
        cfg.models.generator,
        evaluate_fn=evaluator.evaluate,
        thresholds=cfg.generation.thresholds(),
        industry_names={d.industry_id: d.title for d in docs.values()},
    )
    pairs = {q.qa_id: q for q in load_dataset(dataset_path)}
    scores = {s.qa_id: s for s in load_scores(scores_path)}
    sim = SimilarityFilter(provider.embed, cfg.generation.similarity_threshold)
    kept = []
    records = []
    for qa_id in sorted(pairs):
        qa = pairs[qa_id]
        record = {"qa_id": qa_id, "outcome": "kept", "reason": None}
        records.append(record)
        s = scores.get(qa_id)
        if s is None or s.excluded:
            record.update(outcome="discarded", reason="ref_gate_excluded")
            continue
        weak = post.weak_metrics(s, qa.span)
        if len(weak) >= 2:
            record.update(outcome="discarded", reason="discarded_multi_weak")
            continue
        if len(weak) == 1:
            result = post.improve(qa, s)
            if result.outcome != "improved":
                record.update(outcome="discarded", reason=result.outcome)
                continue
            qa = result.qa
            record["improved"] = True
        if post.find_industry_mention(qa.question) is not None:
            try:
                qa = post.generalise(qa)
                record["generalised"] = True
            except Exception:
                record["generalisation_violation"] = True
        if sim.is_duplicate(qa.question):
            record.update(outcome="discarded", reason="discarded_similar")
            continue
        if qa.format == "mcq":
            sba = post.sba_check(qa)
            record["sba_pass"] = sba.passed
            if not sba.passed:
                record.update(outcome="discarded", reason=f"discarded_sba_{sba.reason}")
                continue
        sim.add(qa.question)
        kept.append(qa)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(kept, out / "postprocessed.jsonl")
    with open(out / "postprocess_records.jsonl", "w", encoding="utf-8") as fh:
        for record in sorted(records, key=lambda r: r["qa_id"]):
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    click.echo(f"kept {len(kept)} of {len(pairs)} questions; artifacts in {out_dir}")


# --- classify ------------------------------------------------------------------

@main.group()
def classify() -> None:
    """Train or run the industry classifier."""


@classify.command("train")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True, help="JSONL of {text, labels}.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--hidden", default="128,64", show_default=True)
@click.option("--lr", type=float, default=0.5, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.pass_obj
def classify_train(cfg: AppConfig, data_path: str, out_path: str, hidden: str, lr: float, epochs: int, seed: int, threshold: float) -> None:
    provider = _provider(cfg)
    texts, label_sets = load_training_rows(data_path)
    h1, h2 = (int(x) for x in hidden.split(","))
    model = train_from_texts(
        provider,
        texts,
        label_sets,
        MlpConfig(hidden=(h1, h2), learning_rate=lr, epochs=epochs, seed=seed, threshold=threshold),
    )
    save_model(model, out_path)
    click.echo(
        f"trained on {len(texts)} examples, {len(model.labels)} labels; "
        f"final loss {model.loss_history[-1]:.6f}; wrote {out_path}"
    )


@classify.command("predict")
@click.option("--q", "query_text", required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), default=None, help="MLP model file.")
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), default=None, help="Docs dir for the LLM route.")
@click.option("--server", default=None, help="Run against a service instead: base URL.")
@click.pass_obj
def classify_predict(cfg: AppConfig, query_text: str, model_path: str | None, docs_dir: str | None, server: str | None) -> None:
    if server:
        resp = httpx.post(f"{server.rstrip('/')}/classify", json={"query": query_text}, timeout=60.0)
        resp.raise_for_status()
        click.echo(json.dumps(resp.json(), ensure_ascii=False))
        return
    provider = _provider(cfg)
    if model_path:
        model = load_model(model_path)
        vector = provider.embed([query_text])[0]
        labels = mlp_predict(model, vector)
    elif docs_dir:
        docs = ingest_mod.load_docs(docs_dir)
        labels = llm_classify(provider, cfg.models.classifier, query_text, industry_descriptions(docs))
    else:
        raise click.UsageError("provide --model, --docs, or --server")
    click.echo(json.dumps({"industries": list(labels)}, ensure_ascii=False))


# --- export-ft ------------------------------------------------------------------

@main.command("export-ft")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def export_ft(dataset_path: str, out_path: str) -> None:
    """Export mcq pairs as prompt/completion fine-tuning records."""
    pairs = load_dataset(dataset_path)
    written, skipped = export_finetune_dataset(pairs, out_path)
    click.echo(f"wrote {written} records to {out_path}; skipped {len(skipped)} free_text questions")


# --- ask ------------------------------------------------------------------

@main.command()
@click.option("--q", "query_text", required=True)
@click.option("--pipeline", "variant", type=click.Choice(["baseline", "custom_rag", "llm_pipeline"]), default=None)
@click.option("--index", "index_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--server", default=None, help="Run against a service instead: base URL.")
@click.pass_obj
def ask(cfg: AppConfig, query_text: str, variant: str | None, index_dir: str | None, docs_dir: str | None, server: str | None) -> None:
    """Answer one question through a pipeline."""
    if server:
        body = {"query": query_text}
        if variant:
            body["pipeline"] = variant
        resp = httpx.post(f"{server.rstrip('/')}/ask", json=body, timeout=120.0)
        resp.raise_for_status()
        click.echo(json.dumps(resp.json(), ensure_ascii=False))
        return
    engine = _build_engine(cfg, index_dir, docs_dir, variant)
    answer = engine.answer(query_text)
    click.echo(json.dumps(answer.to_json(), ensure_ascii=False))


# --- bench ------------------------------------------------------------------

@main.command("bench")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--pipeline", "variant", type=click.Choice(["baseline", "custom_rag", "llm_pipeline"]), default="custom_rag", show_default=True)
@click.option("--index", "index_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--md", "md_path", type=click.Path(dir_okay=False), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.pass_obj
def bench(cfg: AppConfig, dataset_path: str, variant: str, index_dir: str | None, docs_dir: str | None, out_path: str, md_path: str | None, workers: int) -> None:
    """Benchmark a pipeline on a dataset."""
    engine = _build_engine(cfg, index_dir, docs_dir, variant)
    dataset = load_dataset(dataset_path)
    report = bench_mod.run_benchmark(
        dataset,
        lambda qa: engine.answer(bench_mod.mcq_query(qa)).text,
        pipeline_name=variant,
        max_workers=workers,
    )
    bench_mod.save_report(report, out_path, md_path)
    click.echo(report.render_markdown())


# --- serve ------------------------------------------------------------------

@main.command()
@click.option("--index", "index_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--docs", "docs_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.pass_obj
def serve(cfg: AppConfig, index_dir: str | None, docs_dir: str | None, host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    engine = _build_engine(cfg, index_dir, docs_dir, None)
    uvicorn.run(create_app(engine), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
