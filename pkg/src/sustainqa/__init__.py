"""Toolkit for building and querying synthetic QA datasets over
sustainability reporting standards: ingestion, chunking, retrieval,
dataset generation with LLM judges, post-processing gates, industry
classification, answering pipelines, and benchmarking."""

__version__ = "0.1.0"
