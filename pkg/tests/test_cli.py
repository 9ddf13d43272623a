import io
import json

import pytest

from safecypher.cli import load_config, main
from safecypher.errors import InputError

from conftest import (
    FIXTURES,
    GOLDENS,
    WORKED_QUESTION,
    WORKED_REPLY,
    build_costar_store,
)

MASKED = "Which Movie AD_HOC and NODE_VALUE co-starred_actors?"


def run(argv, factory=None):
    out = io.StringIO()
    code = main(argv, backend_factory=factory, out=out)
    return code, out.getvalue()


def refuse_factory(config, cache_dir=None):
    raise AssertionError("backend must not be constructed")


@pytest.fixture
def worked(tmp_path):
    """Snapshot, synonyms and mock replies for the co-star example."""
    store = build_costar_store()
    store.save(tmp_path / "graph.json")
    (tmp_path / "syn.tsv").write_text("Movie\tfilm, films, movies\nstarred_actors\tacted, starred\n")
    (tmp_path / "mock.json").write_text(json.dumps({"replies": {MASKED: WORKED_REPLY}}))
    cfg = {
        "store": "graph.json",
        "synonyms": "syn.tsv",
        "policy": "metaqa",
        "backend": {"provider": "mock", "fixtures": "mock.json"},
    }
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    return tmp_path


@pytest.fixture
def metaqa_cfg(tmp_path):
    code, _ = run(["ingest", str(FIXTURES / "kb_50.txt"), "--store", str(tmp_path / "kb.json")])
    assert code == 0
    cfg = {
        "store": "kb.json",
        "synonyms": "metaqa",
        "policy": "metaqa",
        "cache_dir": "cache",
        "backend": {"provider": "mock", "fixtures": str(FIXTURES / "mock_replies_10.json")},
    }
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    return tmp_path


class TestIngest:
    def test_counts_and_idempotent(self, tmp_path):
        argv = ["ingest", str(FIXTURES / "kb_50.txt"), "--store", str(tmp_path / "g.json")]
        code, first = run(argv)
        assert code == 0
        assert "nodes: 162" in first and "  starred_actors: 126" in first
        assert run(argv) == (0, first)

    def test_missing_file(self, tmp_path, capsys):
        code, _ = run(["ingest", str(tmp_path / "nope.txt"), "--store", str(tmp_path / "g.json")])
        assert code == 2
        assert "nope.txt" in capsys.readouterr().err


class TestSchema:
    def test_eight_node_types(self, metaqa_cfg):
        code, out = run(["schema", "--config", str(metaqa_cfg / "config.json")])
        nodes = [ln for ln in out.splitlines() if ln and not ln.startswith("(")]
        assert code == 0 and len(nodes) == 8

    def test_grant(self, metaqa_cfg):
        (metaqa_cfg / "grant.json").write_text('{"nodes": ["Movie", "Actor"], "relations": ["starred_actors"]}')
        code, out = run(["schema", "--config", str(metaqa_cfg / "config.json"), "--grant", str(metaqa_cfg / "grant.json")])
        lines = out.splitlines()
        assert code == 0 and [ln.split("(")[0] for ln in lines[:2]] == ["Actor", "Movie"]
        assert lines[2:] == ["(:Movie)-[starred_actors]-(:Actor)"]

    def test_save(self, metaqa_cfg):
        target = metaqa_cfg / "schema.json"
        assert run(["schema", "--config", str(metaqa_cfg / "config.json"), "--save", str(target)])[0] == 0
        assert json.loads(target.read_text())["format_version"] == 1

    def test_unreachable_store(self, tmp_path):
        assert run(["schema", "--store", str(tmp_path / "absent.json")])[0] == 3

    def test_unreachable_bolt(self):
        assert run(["schema", "--store", "bolt://127.0.0.1:1"])[0] == 3


class TestMask:
    def test_worked_example(self, worked):
        code, out = run(["mask", WORKED_QUESTION, "--config", str(worked / "config.json")], refuse_factory)
        assert code == 0
        assert out == (GOLDENS / "worked_mask_output.txt").read_text()

    def test_no_matches(self, worked):
        code, out = run(["mask", "is it sunny", "--config", str(worked / "config.json")], refuse_factory)
        assert out.splitlines() == ["is it sunny", "", "placeholder\tvalue"]

    def test_unbalanced(self, worked):
        assert run(["mask", "a [b [c]", "--config", str(worked / "config.json")], refuse_factory)[0] == 2

    def test_json(self, worked):
        code, out = run(["mask", WORKED_QUESTION, "--json", "--config", str(worked / "config.json")], refuse_factory)
        doc = json.loads(out)
        assert doc["masked_text"] == MASKED and doc["restorations"]["AD_HOC"] == "Will Smith"


class TestAsk:
    def test_worked_example(self, worked, capsys):
        code, out = run(["ask", WORKED_QUESTION, "--config", str(worked / "config.json"), "--show-query", "--show-violations"])
        assert code == 0
        assert out.splitlines() == ["Bad Boys", "Bad Boys II"]
        err = capsys.readouterr().err
        assert (GOLDENS / "worked_final_query.cypher").read_text().rstrip("\n") in err
        assert "advisory RELATIONSHIP_TYPE" in err

    def test_dry_run(self, worked):
        code, out = run(["ask", WORKED_QUESTION, "--dry-run", "--config", str(worked / "config.json")], refuse_factory)
        assert code == 0 and out.endswith(f"Question: {MASKED}\n")
        assert "Will Smith" not in out and "Martin Lawrence" not in out

    def test_backend_unavailable(self, worked, capsys, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "x")
        cfg = json.loads((worked / "config.json").read_text())
        cfg["backend"] = {"provider": "chat", "endpoint": "http://127.0.0.1:9/v1/chat/completions", "max_retries": 0, "timeout": 2}
        (worked / "chat.json").write_text(json.dumps(cfg))
        code, _ = run(["ask", WORKED_QUESTION, "--config", str(worked / "chat.json")])
        assert code == 4
        assert "unavailable" in capsys.readouterr().err

    def test_no_privacy_refused(self, worked):
        code, _ = run(["ask", WORKED_QUESTION, "--mode", "no_privacy", "--config", str(worked / "config.json")], refuse_factory)
        assert code == 5

    def test_strict(self, worked):
        (worked / "bad.json").write_text(json.dumps({"fallback": "MATCH (m:Movie)-[r]->(a:Actor) RETURN m.name"}))
        argv = ["ask", "list films", "--config", str(worked / "config.json"), "--fixtures", str(worked / "bad.json")]
        assert run(argv)[0] == 0
        assert run(argv + ["--strict"])[0] == 5


class TestEval:
    def test_accuracy_and_report(self, metaqa_cfg):
        out_dir = metaqa_cfg / "reports"
        code, out = run(["eval", str(FIXTURES / "qa_10.txt"), "--config", str(metaqa_cfg / "config.json"), "--out", str(out_dir)])
        assert code == 0
        assert out.splitlines()[0] == "accuracy: 0.900 (9/10)"
        assert (out_dir / "report_privacy_complete.json").exists()

    def test_no_privacy_needs_flag(self, metaqa_cfg):
        argv = ["eval", str(FIXTURES / "qa_10.txt"), "--config", str(metaqa_cfg / "config.json"),
                "--mode", "no_privacy", "--out", str(metaqa_cfg / "r")]
        assert run(argv, refuse_factory)[0] == 5
        code, out = run(argv + ["--allow-leak"])
        assert code == 0 and out.startswith("accuracy: 0.900")

    def test_warm_cache_same_report(self, metaqa_cfg):
        base = ["eval", str(FIXTURES / "qa_10.txt"), "--config", str(metaqa_cfg / "config.json")]
        run(base + ["--out", str(metaqa_cfg / "a")])
        run(base + ["--out", str(metaqa_cfg / "b")], refuse_factory_after_cache(metaqa_cfg / "cache"))
        docs = [json.loads((metaqa_cfg / d / "report_privacy_complete.json").read_text()) for d in "ab"]
        for d in docs:
            d["metadata"].pop("timestamp")
        assert docs[0] == docs[1]

    def test_overrides(self, metaqa_cfg):
        (metaqa_cfg / "ov.json").write_text('{"10": true}')
        code, out = run(["eval", str(FIXTURES / "qa_10.txt"), "--config", str(metaqa_cfg / "config.json"),
                         "--overrides", str(metaqa_cfg / "ov.json"), "--out", str(metaqa_cfg / "r")])
        assert code == 0 and "accuracy with overrides: 1.000" in out

    def test_empty_file(self, metaqa_cfg):
        (metaqa_cfg / "empty.txt").write_text("")
        assert run(["eval", str(metaqa_cfg / "empty.txt"), "--config", str(metaqa_cfg / "config.json")])[0] == 2


def refuse_factory_after_cache(cache_dir):
    """A cache-backed factory whose inner backend must never be reached."""
    from safecypher.llm import CachingBackend
    from conftest import PanickingBackend

    def factory(config, _cache_dir=None):
        return CachingBackend(PanickingBackend(), cache_dir, config.model)

    return factory


class TestConfig:
    def test_missing_referenced_file(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"synonyms": "nope.tsv"}))
        assert run(["schema", "--config", str(tmp_path / "c.json")])[0] == 2

    def test_flags_override_file(self, worked, tmp_path):
        cfg = load_config(str(worked / "config.json"))
        assert cfg.store == str(worked / "graph.json")
        code, _ = run(["schema", "--config", str(worked / "config.json"), "--store", str(tmp_path / "other.json")])
        assert code == 3

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(InputError):
            load_config(str(tmp_path / "c.json"))

    def test_secret_not_accepted_inline(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"backend": {"api_key": "sk-live"}}))
        assert run(["schema", "--config", str(tmp_path / "c.json")])[0] == 4

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
