import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safecypher.errors import EmptySchemaError, ParseError, ReferentialIntegrityError, UnknownLabelError
from safecypher.schema import (
    GraphSchema,
    NodeTypeSpec,
    PropertySpec,
    RbacGrant,
    RelationTypeSpec,
    dumps_schema,
    extract_schema,
    filter_schema,
    infer_value_kind,
    load_grant,
    load_schema,
    loads_schema,
    render_schema,
    save_schema,
)
from safecypher.store.memory import MemoryGraphStore

METAQA_LABELS = {"Movie", "Actor", "Director", "Writer", "Genre", "Language", "Year", "Tag"}


def toy_store():
    s = MemoryGraphStore()
    s.merge_nodes("Person", [{"name": "Ada", "born": 1815}, {"name": "Alan", "born": 1912}])
    s.merge_nodes("Paper", [{"name": "Notes", "score": 9.5, "keywords": ["engine"]}])
    s.merge_nodes("Venue", [{"name": "Royal Society"}])
    s.merge_relationships("WROTE", "Person", "Paper", [("Ada", "Notes")])
    s.merge_relationships("PUBLISHED_IN", "Paper", "Venue", [("Notes", "Royal Society")])
    return s


TOY_DECLARED = GraphSchema(
    (
        NodeTypeSpec("Person", (PropertySpec("name"), PropertySpec("born", "integer"))),
        NodeTypeSpec(
            "Paper",
            (PropertySpec("name"), PropertySpec("score", "float"), PropertySpec("keywords", "list-of-string")),
        ),
        NodeTypeSpec("Venue", (PropertySpec("name"),)),
    ),
    (
        RelationTypeSpec("WROTE", "Person", "Paper"),
        RelationTypeSpec("PUBLISHED_IN", "Paper", "Venue"),
    ),
)


class TestTypes:
    def test_property_name_required(self):
        with pytest.raises(ValueError):
            PropertySpec("")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PropertySpec("x", "date")

    def test_duplicate_property(self):
        with pytest.raises(ValueError):
            NodeTypeSpec("A", (PropertySpec("x"), PropertySpec("x", "integer")))

    def test_duplicate_label(self):
        with pytest.raises(ValueError):
            GraphSchema((NodeTypeSpec("A"), NodeTypeSpec("A")))

    def test_dangling_relation(self):
        with pytest.raises(ReferentialIntegrityError):
            GraphSchema((NodeTypeSpec("A"),), (RelationTypeSpec("R", "A", "B"),))

    def test_order_independent_equality(self):
        a = GraphSchema((NodeTypeSpec("B"), NodeTypeSpec("A")))
        b = GraphSchema((NodeTypeSpec("A"), NodeTypeSpec("B")))
        assert a == b


@pytest.mark.parametrize(
    "values, kind",
    [
        ([1, 2], "integer"),
        ([1, 2.5], "float"),
        (["a", 1], "string"),
        ([["a"], "b"], "list-of-string"),
        ([], "string"),
        ([True], "string"),
    ],
)
def test_infer_value_kind(values, kind):
    assert infer_value_kind(values) == kind


class TestExtract:
    def test_metaqa(self, metaqa_schema):
        assert metaqa_schema.node_labels == METAQA_LABELS
        movie = {p.name for p in metaqa_schema.node("Movie").properties}
        assert {"release_year", "has_tags", "has_imdb_votes", "has_imdb_rating"} <= movie
        assert len(metaqa_schema.relation_types) == 7

    def test_single_type(self):
        s = MemoryGraphStore()
        s.merge_nodes("Thing", [{"name": "x"}])
        schema = extract_schema(s)
        assert len(schema.node_types) == 1 and len(schema.relation_types) == 0

    def test_matches_declared_fixture(self):
        assert extract_schema(toy_store()) == TOY_DECLARED

    def test_empty_store(self):
        with pytest.raises(EmptySchemaError):
            extract_schema(MemoryGraphStore())

    def test_no_values_leak(self, metaqa_schema, metaqa_catalog):
        text = render_schema(metaqa_schema).lower()
        doc = dumps_schema(metaqa_schema).lower()
        for v in metaqa_catalog.sensitive_values():
            assert v.lower() not in text
            assert v.lower() not in doc


class TestDocument:
    def test_round_trip(self, tmp_path, metaqa_schema):
        path = tmp_path / "schema.json"
        save_schema(metaqa_schema, path)
        loaded = load_schema(path)
        assert loaded == metaqa_schema
        assert len(loaded.node_types) == 8
        save_schema(loaded, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

    def test_empty_node_types(self):
        with pytest.raises(EmptySchemaError):
            loads_schema(json.dumps({"format_version": 1, "node_types": [], "relation_types": []}))

    def test_dangling_relation(self):
        doc = {
            "format_version": 1,
            "node_types": [{"label": "A", "properties": []}],
            "relation_types": [{"label": "R", "source": "A", "target": "Z", "properties": []}],
        }
        with pytest.raises(ReferentialIntegrityError):
            loads_schema(json.dumps(doc))

    def test_malformed_json_reports_line(self):
        with pytest.raises(ParseError) as exc:
            loads_schema('{\n"format_version": 1,\n"node_types": [\n')
        assert exc.value.line is not None

    def test_missing_field_reported(self):
        with pytest.raises(ParseError) as exc:
            loads_schema(json.dumps({"format_version": 1, "node_types": [{"properties": []}]}))
        assert "label" in str(exc.value)

    def test_wrong_version(self):
        with pytest.raises(ParseError):
            loads_schema(json.dumps({"format_version": 99, "node_types": []}))


class TestFilter:
    def test_full_grant_identity(self, metaqa_schema):
        assert filter_schema(metaqa_schema, RbacGrant.full(metaqa_schema)) == metaqa_schema

    def test_movie_actor(self, metaqa_schema):
        out = filter_schema(metaqa_schema, RbacGrant({"Movie", "Actor"}, {"starred_actors"}))
        assert len(out.node_types) == 2 and len(out.relation_types) == 1

    def test_endpoint_rule(self, metaqa_schema):
        out = filter_schema(metaqa_schema, RbacGrant({"Movie"}, {"directed_by"}))
        assert len(out.node_types) == 1 and len(out.relation_types) == 0

    def test_unknown_label(self, metaqa_schema):
        with pytest.raises(UnknownLabelError):
            filter_schema(metaqa_schema, RbacGrant({"Studio"}, set()))

    def test_grant_file(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text('{"nodes": ["Movie"], "relations": []}')
        assert load_grant(p) == RbacGrant({"Movie"}, set())
        p.write_text('{"nodes": "Movie"}')
        with pytest.raises(ParseError):
            load_grant(p)

    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_idempotent(self, metaqa_schema, data):
        nodes = data.draw(st.sets(st.sampled_from(sorted(metaqa_schema.node_labels))))
        rels = data.draw(st.sets(st.sampled_from(sorted(metaqa_schema.relation_labels))))
        g = RbacGrant(nodes, rels)
        once = filter_schema(metaqa_schema, g)
        assert filter_schema(once, RbacGrant(once.node_labels, rels & once.relation_labels)) == once
        assert once.node_labels == frozenset(nodes)
        for r in once.relation_types:
            assert r.label in rels and {r.source_label, r.target_label} <= nodes


class TestRender:
    def test_single_line(self):
        assert render_schema(GraphSchema((NodeTypeSpec("Thing"),))) == "Thing()"

    def test_deterministic(self, metaqa_schema):
        assert render_schema(metaqa_schema) == render_schema(metaqa_schema)

    def test_layout(self):
        text = render_schema(TOY_DECLARED)
        assert text.splitlines() == [
            "Paper(keywords: list-of-string, name: string, score: float)",
            "Person(born: integer, name: string)",
            "Venue(name: string)",
            "(:Paper)-[PUBLISHED_IN]-(:Venue)",
            "(:Person)-[WROTE]-(:Paper)",
        ]

    def test_relation_properties(self):
        s = GraphSchema(
            (NodeTypeSpec("A"), NodeTypeSpec("B")),
            (RelationTypeSpec("R", "A", "B", (PropertySpec("since", "integer"),)),),
        )
        assert render_schema(s).splitlines()[-1] == "(:A)-[R {since: integer}]-(:B)"

    def test_each_element_once(self, metaqa_schema):
        lines = render_schema(metaqa_schema).splitlines()
        heads = [ln.split("(")[0] for ln in lines if not ln.startswith("(")]
        assert sorted(heads) == sorted(metaqa_schema.node_labels)
        rels = [ln.split("[")[1].split("]")[0] for ln in lines if ln.startswith("(")]
        assert sorted(rels) == sorted(r.label for r in metaqa_schema.relation_types)
        for ln in lines:
            if not ln.startswith("("):
                props = [p.split(":")[0].strip() for p in ln[ln.index("(") + 1 : -1].split(",")]
                assert len(props) == len(set(props))
