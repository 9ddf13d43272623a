"""Privacy-preserving natural-language to Cypher translation.

Only the graph schema and a masked question are sent to the language model;
sensitive values are restored locally before the query runs.
"""
from .catalog import (
    EntityCatalog,
    EntityClass,
    SensitivityPolicy,
    SynonymTable,
    add_ad_hoc,
    build_catalog,
)
from .cypher import FinalQuery, GeneratedQuery, restore_placeholders, sanitize, validate
from .llm import LlmBackendConfig, MockBackend, PromptBundle, build_prompt, estimate_tokens
from .masker import MaskedQuestion, mask, restore, substitute_synonyms, tokenize
from .pipeline import AskResult, Pipeline
from .schema import GraphSchema, RbacGrant, extract_schema, filter_schema, load_schema, render_schema

__version__ = "0.1.0"

__all__ = [
    "AskResult",
    "EntityCatalog",
    "EntityClass",
    "FinalQuery",
    "GeneratedQuery",
    "GraphSchema",
    "LlmBackendConfig",
    "MaskedQuestion",
    "MockBackend",
    "Pipeline",
    "PromptBundle",
    "RbacGrant",
    "SensitivityPolicy",
    "SynonymTable",
    "add_ad_hoc",
    "build_catalog",
    "build_prompt",
    "estimate_tokens",
    "extract_schema",
    "filter_schema",
    "load_schema",
    "mask",
    "render_schema",
    "restore",
    "restore_placeholders",
    "sanitize",
    "substitute_synonyms",
    "tokenize",
    "validate",
]
