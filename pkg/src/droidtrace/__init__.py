"""LLM-assisted behavior analysis of decompiled Android apps."""

from .analysis import DEFAULT_QUERIES, AnalysisConfig, AnalysisEngine, BehaviorCategory, QuerySpec
from .indexing import AppMeta, Indexer, PipelineConfig
from .llm import LLMGateway, ReplayCache, Role
from .report import FinalReport, build_report, render
from .splitter import CodeUnit, extract_methods, parse_source_tree
from .vectorstore import MockEmbedder, VectorStore

__version__ = "0.1.0"
