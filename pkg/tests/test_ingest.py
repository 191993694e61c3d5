import io
import json

import numpy as np
import pytest

from ape_anomaly.core import EventSchema
from ape_anomaly.exceptions import ParseError
from ape_anomaly.ingest import (
    Dataset,
    dataset_stats,
    filter_new_events,
    infer_format,
    load_dataset,
    parse_events,
    split_validation,
    write_jsonl,
)


@pytest.fixture
def schema():
    return EventSchema(("uid", "proc"))


class TestParse:
    def test_csv(self, schema):
        rows, stats = parse_events(b"uid,proc\nu1,p1\n", "csv", schema)
        assert rows == [("u1", "p1")]
        assert stats.events == 1

    def test_csv_reorders_columns_and_quotes(self, schema):
        rows, _ = parse_events(b'proc,uid\n"p,1",u1\n\np2,u2\n', "csv", schema)
        assert rows == [("u1", "p,1"), ("u2", "p2")]

    def test_jsonl(self, schema):
        rows, _ = parse_events(b'{"uid":"u1","proc":"p2"}\n\n', "jsonl", schema)
        assert rows == [("u1", "p2")]

    def test_csv_missing_column_strict(self, schema):
        with pytest.raises(ParseError) as exc:
            parse_events(b"uid,proc\nu1\n", "csv", schema, strict=True)
        assert exc.value.line == 2

    def test_csv_missing_column_lenient(self, schema):
        rows, stats = parse_events(b"uid,proc\nu1\nu2,p2\n", "csv", schema)
        assert rows == [("u2", "p2")]
        assert [ln for ln, _ in stats.malformed] == [2]

    def test_header_mismatch_is_fatal(self, schema):
        with pytest.raises(ParseError, match="lacks"):
            parse_events(b"uid,host\nu1,h1\n", "csv", schema)

    def test_jsonl_malformed(self, schema):
        data = b'{"uid":"u1","proc":"p1"}\nnot json\n{"uid":"u1"}\n{"uid":1,"proc":"p"}\n'
        rows, stats = parse_events(data, "jsonl", schema)
        assert rows == [("u1", "p1")]
        assert [ln for ln, _ in stats.malformed] == [2, 3, 4]
        with pytest.raises(ParseError):
            parse_events(data, "jsonl", schema, strict=True)

    def test_idempotent_rereads(self, schema, tmp_path):
        path = tmp_path / "ev.jsonl"
        with open(path, "w") as fh:
            write_jsonl([("u1", "p1"), ("u2", "p1"), ("u1", "p1")], schema, fh)
        first, _ = parse_events(path, "jsonl", schema)
        second, _ = parse_events(path, "jsonl", schema)
        assert first == second == [("u1", "p1"), ("u2", "p1"), ("u1", "p1")]

    def test_stream_source(self, schema):
        rows, _ = parse_events(io.BytesIO(b"uid,proc\nu1,p1\n"), "csv", schema)
        assert rows == [("u1", "p1")]

    def test_infer_format(self):
        assert infer_format("a/b.jsonl") == "jsonl"
        assert infer_format("x.CSV") == "csv"
        with pytest.raises(ValueError):
            infer_format("x.txt")


def _ds(rows, schema, vocab=None):
    return Dataset.from_rows(rows, schema, vocab, allow_unk=vocab is not None)


class TestFilterNewEvents:
    def test_set_difference(self, schema):
        train = _ds([("u1", "p1")], schema)
        test = _ds([("u1", "p1"), ("u1", "p2")], schema, train.vocab)
        assert filter_new_events(train, test).rows() == [("u1", "p2")]

    def test_subset_gives_empty(self, schema):
        train = _ds([("u1", "p1"), ("u2", "p2")], schema)
        test = _ds([("u2", "p2")], schema, train.vocab)
        assert len(filter_new_events(train, test)) == 0

    def test_empty_train_dedups_test(self, schema):
        train = _ds([], schema)
        test = _ds([("u1", "p1"), ("u1", "p1"), ("u2", "p1")], schema, train.vocab)
        assert filter_new_events(train, test).rows() == [("u1", "p1"), ("u2", "p1")]
        assert len(filter_new_events(train, test, dedup=False)) == 3

    def test_unknown_entities_compared_as_strings(self, schema):
        train = _ds([("u1", "p1"), ("u9", "p1")], schema)
        # u7 and u8 both encode to UNK but are different events
        test = _ds([("u7", "p1"), ("u8", "p1")], schema, _ds([("u1", "p1")], schema).vocab)
        assert len(filter_new_events(train, test)) == 2

    def test_disjoint_from_train(self, schema):
        rng = np.random.default_rng(0)
        pool = [(f"u{a}", f"p{b}") for a in range(4) for b in range(4)]
        train = _ds([pool[i] for i in rng.integers(0, 16, 30)], schema)
        test = _ds([pool[i] for i in rng.integers(0, 16, 30)], schema, train.vocab)
        assert not set(filter_new_events(train, test).rows()) & set(train.rows())


class TestStats:
    def test_distinct_counts(self, schema):
        d = _ds([("u1", "p1"), ("u1", "p2"), ("u2", "p1")], schema)
        stats = dataset_stats(d)
        assert stats["events"] == 3
        assert stats["distinct_entities"] == {"uid": 2, "proc": 2}

    def test_new_percent_identity(self, schema):
        d = _ds([("u1", "p1"), ("u1", "p2")], schema)
        assert dataset_stats(d, reference=d)["new_percent"] == 0.0

    def test_new_percent(self, schema):
        train = _ds([("u1", "p1")], schema)
        test = _ds([("u1", "p1"), ("u1", "p2"), ("u2", "p1"), ("u1", "p2")], schema, train.vocab)
        stats = dataset_stats(test, reference=train)
        assert stats["new_events"] == 3
        assert stats["new_distinct_events"] == 2
        assert stats["new_percent"] == pytest.approx(75.0)


def test_load_dataset_and_split(tmp_path, schema):
    path = tmp_path / "ev.csv"
    path.write_text("uid,proc\n" + "".join(f"u{i % 3},p{i % 5}\n" for i in range(50)))
    d = load_dataset(path, schema)
    assert len(d) == 50 and d.stats.events == 50
    tr, va = split_validation(d, 0.1, np.random.default_rng(0))
    assert len(tr) == 45 and len(va) == 5
    assert sorted(tr.rows() + va.rows()) == sorted(d.rows())


def test_write_jsonl_format(schema):
    buf = io.StringIO()
    write_jsonl([("u1", "p1")], schema, buf)
    assert json.loads(buf.getvalue()) == {"uid": "u1", "proc": "p1"}
