"""Typed memory graph with plan-driven question answering."""

from graphmind.graph import EdgeKind, MemoryGraph, Triple, VertexKind
from graphmind.llmio import GenerationConfig, LlmGateway, ResponseCache, ScriptedBackend
from graphmind.memorize import Document, IngestReport, Memorizer, build_index
from graphmind.qa import PipelineConfig, QaPipeline
from graphmind.vecindex import HashingEmbedder, VectorIndex

__all__ = [
    "Document",
    "EdgeKind",
    "GenerationConfig",
    "HashingEmbedder",
    "IngestReport",
    "LlmGateway",
    "Memorizer",
    "MemoryGraph",
    "PipelineConfig",
    "QaPipeline",
    "ResponseCache",
    "ScriptedBackend",
    "Triple",
    "VectorIndex",
    "VertexKind",
    "build_index",
]
