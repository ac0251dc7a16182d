"""Knowledge-graph hybrid retrieval: curate documents into a graph and vector store, then query them."""

import json as _json

from ._kgrag import (
    ConfigError,
    FormatError,
    KgragError,
    MissingStoreError,
    ProviderError,
    QuerySemanticError,
    QuerySyntaxError,
    __version__,
    canonical_query,
    detokenize,
    tokenize,
)
from ._kgrag import Engine as _Engine

LEVELS = ("llm_only", "kb", "corpus", "kg")


class Engine:
    """Configured engine over one store directory.

    `overrides` maps config keys to values and wins over the config file.
    """

    def __init__(self, config_path="", store=None, **overrides):
        opts = {k: str(v) for k, v in overrides.items()}
        if store is not None:
            opts["store"] = str(store)
        self._engine = _Engine(str(config_path), opts)

    def curate(self, manifest_path):
        return _json.loads(self._engine.curate(str(manifest_path)))

    def query(self, q, level=None, n=None, k=None, verbose=False):
        return _json.loads(
            self._engine.query(q, level or "", -1 if n is None else n, -1 if k is None else k, verbose, "json")
        )

    def query_text(self, q, level=None):
        return self._engine.query(q, level or "", -1, -1, False, "text")

    def stats(self, top=0):
        return _json.loads(self._engine.stats(top))

    def match(self, query):
        return _json.loads(self._engine.match(query))

    def export_cypher(self):
        return self._engine.export_cypher()


__all__ = [
    "LEVELS",
    "ConfigError",
    "Engine",
    "FormatError",
    "KgragError",
    "MissingStoreError",
    "ProviderError",
    "QuerySemanticError",
    "QuerySyntaxError",
    "__version__",
    "canonical_query",
    "detokenize",
    "tokenize",
]
