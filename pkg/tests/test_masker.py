import re

import pytest
from hypothesis import given, settings

from safecypher.catalog import PLACEHOLDER_RE, CatalogEntry, EntityCatalog, EntityClass, build_catalog
from safecypher.errors import AnnotationError, UnresolvedPlaceholderError
from safecypher.masker import Placeholder, mask, restore, substitute_synonyms, tokenize
from safecypher.metaqa import metaqa_policy
from safecypher.schema import extract_schema

from conftest import WORKED_QUESTION, build_costar_store, fixture_catalog, worked_synonyms
from corpus import catalog_pools, leaked, questions, unbracket


@pytest.fixture(scope="module")
def worked_catalog():
    store = build_costar_store()
    return build_catalog(extract_schema(store), store.iter_property_values(), worked_synonyms(), metaqa_policy())


def entry(text, cls=EntityClass.NODE_VALUE, sensitive=True, canonical=None):
    return CatalogEntry(tuple(text.lower().split()), canonical or text, cls, sensitive)


class TestTokenize:
    def test_worked_example(self):
        toks = tokenize(WORKED_QUESTION)
        assert [t.text.lower() for t in toks] == ["which", "film", "will smith", "and", "martin", "lawrence", "co", "acted"]
        assert [t.bracketed for t in toks] == [False, False, True, False, False, False, False, False]
        assert WORKED_QUESTION[slice(*toks[2].span)] == "[Will Smith]"

    def test_empty(self):
        assert tokenize("") == []

    @pytest.mark.parametrize("q", ["a [b [c]", "a ]b", "[", "x [ ] y"])
    def test_bad_annotation(self, q):
        with pytest.raises(AnnotationError):
            tokenize(q)

    def test_spans_ordered(self):
        toks = tokenize("who, [The Matrix] - and  co-star?")
        ends = [t.start for t in toks]
        assert ends == sorted(ends)
        assert all(a.end <= b.start for a, b in zip(toks, toks[1:]))


class TestPlaceholder:
    def test_rendering(self):
        assert Placeholder(EntityClass.AD_HOC).rendered == "AD_HOC"
        assert Placeholder(EntityClass.NODE_VALUE, 3).rendered == "NODE_VALUE_3"
        assert re.fullmatch(r"[A-Z0-9_]+", Placeholder(EntityClass.RELATION_PROPERTY, 12).rendered)


class TestMask:
    def test_worked_example(self, worked_catalog):
        m = substitute_synonyms(mask(WORKED_QUESTION, worked_catalog))
        assert m.masked_text == "Which Movie AD_HOC and NODE_VALUE co-starred_actors?"
        assert dict(m.restorations) == {"AD_HOC": "Will Smith", "NODE_VALUE": "Martin Lawrence"}
        assert [(s.surface, s.canonical, s.entity_class) for s in m.substitutions] == [
            ("film", "Movie", EntityClass.NODE_LABEL),
            ("acted", "starred_actors", EntityClass.NODE_PROPERTY),
        ]

    def test_before_synonyms(self, worked_catalog):
        m = mask(WORKED_QUESTION, worked_catalog)
        assert m.masked_text == "Which film AD_HOC and NODE_VALUE co-acted?"

    def test_no_matches(self, worked_catalog):
        m = mask("is it raining today", worked_catalog)
        assert m.masked_text == "is it raining today"
        assert not m.restorations and not m.substitutions

    def test_two_ad_hoc(self, worked_catalog):
        m = mask("did [Ann Lee] and [Bo Chan] co-star", worked_catalog)
        assert m.masked_text == "did AD_HOC and AD_HOC_2 co-star"
        assert dict(m.restorations) == {"AD_HOC": "Ann Lee", "AD_HOC_2": "Bo Chan"}

    def test_repeated_value_shares_placeholder(self, worked_catalog):
        m = mask("Will Smith or Will Smith", worked_catalog)
        assert m.masked_text == "NODE_VALUE or NODE_VALUE"
        assert dict(m.restorations) == {"NODE_VALUE": "Will Smith"}

    def test_ad_hoc_beats_node_value(self, worked_catalog):
        m = mask("[Martin Lawrence] films", worked_catalog)
        assert dict(m.restorations) == {"AD_HOC": "Martin Lawrence"}

    def test_longest_match(self):
        cat = EntityCatalog.from_entries([entry("will"), entry("will smith")])
        m = mask("will smith acted", cat)
        assert m.masked_text == "NODE_VALUE acted"
        assert dict(m.restorations) == {"NODE_VALUE": "will smith"}

    def test_key_cannot_swallow_sensitive(self):
        cat = EntityCatalog.from_entries(
            [entry("star", EntityClass.NODE_PROPERTY, False, "starred_actors"), entry("star wars")]
        )
        assert mask("who was in star wars", cat).masked_text == "who was in NODE_VALUE"

    def test_exempt_value_passes_through(self, worked_catalog):
        m = substitute_synonyms(mask("who acted in Creator", worked_catalog))
        assert m.masked_text == "who starred_actors in Creator"

    def test_value_containing_placeholder_word(self):
        cat = EntityCatalog.from_entries([entry("Agent AD_HOC")])
        assert mask("Agent AD_HOC returns", cat).masked_text == "NODE_VALUE returns"

    def test_deterministic(self, worked_catalog):
        assert mask(WORKED_QUESTION, worked_catalog) == mask(WORKED_QUESTION, worked_catalog)

    def test_idempotent(self, worked_catalog):
        once = mask(WORKED_QUESTION, worked_catalog)
        again = mask(once.masked_text, worked_catalog)
        assert again.masked_text == once.masked_text and not again.restorations


class TestSynonyms:
    def test_about(self, metaqa_catalog):
        m = substitute_synonyms(mask("what topics is [The Iron Crown] about", metaqa_catalog))
        assert m.masked_text == "what topics is AD_HOC has_tags"

    def test_no_synonyms(self, worked_catalog):
        m = mask("is it raining", worked_catalog)
        assert substitute_synonyms(m) == m

    def test_twice(self, worked_catalog):
        once = substitute_synonyms(mask(WORKED_QUESTION, worked_catalog))
        assert substitute_synonyms(once) == once

    def test_restorations_untouched(self, worked_catalog):
        m = mask(WORKED_QUESTION, worked_catalog)
        assert substitute_synonyms(m).restorations == m.restorations


class TestRestore:
    def test_reply(self):
        assert restore('toLower("AD_HOC")', {"AD_HOC": "Will Smith"}) == 'toLower("Will Smith")'

    def test_unchanged(self):
        assert restore("nothing here", {}) == "nothing here"

    def test_token_boundary(self):
        with pytest.raises(UnresolvedPlaceholderError):
            restore("AD_HOC_10 and AD_HOC", {"AD_HOC": "x", "AD_HOC_1": "y"})

    def test_not_inside_identifiers(self):
        assert restore("MY_AD_HOC AD_HOC", {"AD_HOC": "v"}) == "MY_AD_HOC v"


CATALOG = fixture_catalog()
SENSITIVE = catalog_pools(CATALOG)[0]


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(q=questions(CATALOG))
    def test_no_leak(self, q):
        for m in (mask(q, CATALOG), substitute_synonyms(mask(q, CATALOG))):
            assert leaked(m.masked_text, SENSITIVE) == []
            for value in m.restorations.values():
                assert leaked(m.masked_text, [value]) == []

    @settings(max_examples=300, deadline=None)
    @given(q=questions(CATALOG))
    def test_restoration_inverse(self, q):
        m = mask(q, CATALOG)
        back = restore(m.masked_text, m.restorations)
        assert back == unbracket(q)
        assert PLACEHOLDER_RE.search(back) is None

    @settings(max_examples=200, deadline=None)
    @given(q=questions(CATALOG))
    def test_placeholders_distinct_and_present(self, q):
        m = mask(q, CATALOG)
        found = PLACEHOLDER_RE.findall(m.masked_text)
        assert set(found) == set(m.restorations)
        assert len(set(m.restorations.values())) == len(m.restorations)

    @settings(max_examples=200, deadline=None)
    @given(q=questions(CATALOG))
    def test_idempotent(self, q):
        m = substitute_synonyms(mask(q, CATALOG))
        again = mask(m.masked_text, CATALOG)
        assert again.masked_text == m.masked_text
        assert not again.restorations
