from pathlib import Path

import pytest

from twostage_ranker import RankedList, TrecRun, parse_run, write_run
from twostage_ranker.runs import format_run, rank_entries


def test_rank_entries_breaks_ties_by_doc_id_descending() -> None:
    """Test the ordering of scored documents."""
    scores = {"d1": 1.0, "d3": 2.0, "d2": 1.0, "d10": 1.0}
    assert rank_entries(scores) == [("d3", 2.0), ("d2", 1.0), ("d10", 1.0), ("d1", 1.0)]


def test_from_scores_truncates() -> None:
    """Test that `from_scores` keeps the top k."""
    ranked = RankedList.from_scores("q", {"a": 0.1, "b": 0.3, "c": 0.2}, k=2)
    assert ranked.doc_ids == ["b", "c"]
    with pytest.raises(ValueError):
        RankedList.from_scores("q", {"a": 0.1}, k=0)


def test_ranked_list_validation() -> None:
    """Test that unsorted or repeated entries are rejected."""
    with pytest.raises(ValueError):
        RankedList("q", (("a", 0.1), ("b", 0.2)))
    with pytest.raises(ValueError):
        RankedList("q", (("a", 0.2), ("a", 0.1)))
    with pytest.raises(ValueError):
        RankedList("q", (("a", 0.1), ("b", 0.1)))


def test_trec_run() -> None:
    """Test query order, lookups and tag validation of runs."""
    run = TrecRun.from_lists(
        [RankedList("q2", (("a", 1.0),)), RankedList("q1", (("b", 2.0),))], "bm25"
    )
    assert run.query_ids == ["q2", "q1"]
    assert run.get("q9") == RankedList("q9")
    assert run.with_tag("other").run_tag == "other"
    with pytest.raises(ValueError):
        TrecRun.from_lists([RankedList("q1"), RankedList("q1")])
    with pytest.raises(ValueError):
        TrecRun({}, "two words")
    with pytest.raises(ValueError):
        TrecRun({"q1": RankedList("q2")})


def test_format_run() -> None:
    """Test the six-column run layout and score formatting."""
    run = TrecRun.from_lists(
        [RankedList.from_scores("q1", {"d1": 0.1, "d2": 2.0, "d3": -1.0})], "tag"
    )
    assert format_run(run) == (
        "q1 Q0 d2 1 2.0 tag\n"
        "q1 Q0 d1 2 0.1 tag\n"
        "q1 Q0 d3 3 -1.0 tag\n"
    )


def test_write_then_parse(tmp_path: Path) -> None:
    """Test that written runs parse back to the same rankings."""
    run = TrecRun.from_lists(
        [
            RankedList.from_scores("q1", {"d1": 1 / 3, "d2": 2 / 3}),
            RankedList.from_scores("q2", {"d3": 1e-12}),
        ],
        "dense",
    )
    path = tmp_path / "dense.run"
    write_run(run, path)
    assert parse_run(path) == run
