"""End-to-end question answering: mask, prompt, complete, check, restore, execute."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .catalog import EntityCatalog, SensitivityPolicy, SynonymTable, add_ad_hoc, build_catalog
from .cypher import FinalQuery, GeneratedQuery, check, restore_placeholders, sanitize
from .errors import LeakError, NotAQueryError, SafeCypherError, StrictValidationError
from .llm import RULES_VERSION, Backend, PromptBundle, build_prompt, estimate_tokens
from .masker import MaskedQuestion, mask, substitute_synonyms
from .metaqa import MODES, execute
from .schema import GraphSchema, RbacGrant, extract_schema, filter_schema, render_schema
from .text import tokenize

log = logging.getLogger(__name__)


@dataclass
class AskResult:
    question: str
    mode: str
    masked: MaskedQuestion | None = None
    prompt: PromptBundle | None = None
    reply: str | None = None
    generated: GeneratedQuery | None = None
    final: FinalQuery | None = None
    results: set[str] | None = None
    error: SafeCypherError | None = None
    attempts: int = 0


@dataclass
class Pipeline:
    store: object
    schema: GraphSchema
    catalog: EntityCatalog
    backend: Backend | None = None
    strict: bool = False
    repair_attempts: int = 0
    model_name: str = "unknown"
    decoding: dict = field(default_factory=dict)
    rules_version: str = RULES_VERSION

    def __post_init__(self):
        self.schema_text = render_schema(self.schema)

    @classmethod
    def from_store(
        cls,
        store,
        synonyms: SynonymTable | None = None,
        policy: SensitivityPolicy | None = None,
        backend: Backend | None = None,
        grant: RbacGrant | None = None,
        **kwargs,
    ) -> "Pipeline":
        """Extract the schema, build the catalog, and apply an optional grant.

        The catalog is built from the full graph so values outside the grant
        are still recognised and masked.
        """
        full = extract_schema(store)
        catalog = build_catalog(full, store.iter_property_values(), synonyms, policy)
        schema = filter_schema(full, grant) if grant is not None else full
        return cls(store, schema, catalog, backend, **kwargs)

    def mask_question(self, question: str, synonyms: bool = True) -> MaskedQuestion:
        masked = mask(question, self.catalog)
        return substitute_synonyms(masked) if synonyms else masked

    def build(self, question: str, mode: str = "privacy_complete") -> tuple[MaskedQuestion, PromptBundle]:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "no_privacy":
            masked = MaskedQuestion(question)
        else:
            masked = self.mask_question(question, synonyms=(mode == "privacy_complete"))
        prompt = build_prompt(self.schema_text, masked)
        if mode != "no_privacy":
            self.guard(question, masked)
        return masked, prompt

    def guard(self, question: str, masked: MaskedQuestion) -> None:
        """Refuse to send a masked question that still carries a sensitive value."""
        catalog = self.catalog
        for t in tokenize(question):
            if t.bracketed:
                catalog = add_ad_hoc(catalog, t.text)
        hits = catalog.find_sensitive(masked.masked_text)
        if hits:
            raise LeakError(f"masked question still contains {len(hits)} sensitive span(s)")

    def answer(self, question: str, mode: str = "privacy_complete", dry_run: bool = False) -> AskResult:
        result = AskResult(question, mode)
        self._run(result, dry_run)
        return result

    def _run(self, result: AskResult, dry_run: bool) -> None:
        result.masked, result.prompt = self.build(result.question, result.mode)
        if dry_run:
            return
        if self.backend is None:
            raise SafeCypherError("no LLM backend configured")
        prompt = result.prompt
        for attempt in range(self.repair_attempts + 1):
            result.attempts = attempt + 1
            result.reply = self.backend.complete(prompt)
            try:
                generated = check(sanitize(result.reply), self.schema)
            except NotAQueryError as exc:
                if attempt < self.repair_attempts:
                    prompt = self._repair_prompt(result.prompt, ["NOT_A_QUERY"])
                    continue
                raise exc
            result.generated = generated
            if generated.violations and attempt < self.repair_attempts:
                prompt = self._repair_prompt(result.prompt, [v.rule for v in generated.violations])
                continue
            break
        if self.strict and result.generated.violations:
            raise StrictValidationError(
                "query violates rule(s): " + ", ".join(v.rule for v in result.generated.violations)
            )
        result.final = restore_placeholders(result.generated, result.masked.restorations)
        result.results = execute(self.store, result.final)

    @staticmethod
    def _repair_prompt(prompt: PromptBundle, rules: list[str]) -> PromptBundle:
        note = "Your previous reply broke these rules: " + ", ".join(sorted(set(rules))) + ". Answer again."
        full = prompt.full_text + note + "\n"
        return PromptBundle(prompt.system_rules, prompt.schema_text, prompt.masked_question, full, estimate_tokens(full))

    def ask(self, question: str, mode: str = "privacy_complete", dry_run: bool = False) -> AskResult:
        """Like :meth:`answer` but failures land in ``result.error``."""
        result = AskResult(question, mode)
        try:
            self._run(result, dry_run)
        except SafeCypherError as exc:
            log.info("question failed: %s", exc)
            result.error = exc
        return result
