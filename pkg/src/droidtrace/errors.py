"""Exception hierarchy shared across the pipeline stages."""

from __future__ import annotations


class DroidTraceError(Exception):
    """Base class for every error raised by this package."""

    module = "droidtrace"


# --- java splitter ---------------------------------------------------------


class SplitterError(DroidTraceError):
    module = "java-splitter"


class RootNotFound(SplitterError):
    pass


class EmptyTree(SplitterError):
    pass


class JavaSyntaxError(SplitterError):
    pass


class UnbalancedBraces(JavaSyntaxError):
    pass


# --- llm gateway -----------------------------------------------------------


class GatewayError(DroidTraceError):
    module = "llm-gateway"


class MissingPlaceholder(GatewayError):
    def __init__(self, name: str):
        super().__init__(f"missing placeholder: {name}")
        self.name = name


class CacheMiss(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"replay cache has no entry for key {key}")
        self.key = key


class ProviderError(GatewayError):
    def __init__(self, status: int | None, message: str):
        super().__init__(f"provider error ({status}): {message}")
        self.status = status
        self.message = message


# --- vector store ----------------------------------------------------------


class StoreError(DroidTraceError):
    module = "vector-store"


class EmptyText(StoreError):
    pass


class DimMismatch(StoreError):
    pass


class EmptyStore(StoreError):
    pass


class NoFilterFields(StoreError):
    pass


class CorruptStore(StoreError):
    pass


class StoreWriteError(StoreError):
    module = "indexing-pipeline"


# --- report / eval / cli ---------------------------------------------------


class WrongQueryCount(DroidTraceError):
    module = "report-builder"


class EvalError(DroidTraceError):
    module = "eval-harness"


class KeyMismatch(EvalError):
    pass


class EmptyCounts(EvalError):
    pass


class ZeroTotal(EvalError):
    pass


class ConfigError(DroidTraceError):
    module = "cli"
