import pytest

from vbscore.gains import RankedRun, ResultItem
from vbscore.intent import CandidateEntity, IntentDistribution, ScoredCandidate
from vbscore.io import Query


def make_entity(entity_id, name=None, aliases=(), attributes=None):
    return CandidateEntity(
        entity_id=entity_id,
        surface_name=name if name is not None else f"Name {entity_id}",
        aliases=tuple(aliases),
        attributes=dict(attributes or {}),
    )


def make_dist(pairs, **kwargs):
    """Build a distribution from (entity_id, probability) pairs."""
    entries = tuple((make_entity(eid), p) for eid, p in pairs)
    return IntentDistribution(entries, **kwargs)


def make_run(query_id, titles, cutoff_k=None):
    items = tuple(
        ResultItem(doc_id=f"{query_id}-d{i}", rank=i, title=title)
        for i, title in enumerate(titles, start=1)
    )
    return RankedRun(
        query_id=query_id,
        items=items,
        cutoff_k=cutoff_k if cutoff_k is not None else max(1, len(items)),
    )


@pytest.fixture
def smith_candidates():
    """Two plausible John Smiths plus an unrelated entity."""
    return (
        ScoredCandidate(
            make_entity(
                "E1",
                "John Smith",
                aliases=("J. Smith",),
                attributes={"employer": "City Hospital", "field": "EHR"},
            ),
            2.0,
        ),
        ScoredCandidate(
            make_entity(
                "E2",
                "John A. Smith",
                aliases=("EHR Smith",),
                attributes={"employer": "State University"},
            ),
            1.0,
        ),
        ScoredCandidate(
            make_entity("E3", "Jane Doe", attributes={"employer": "City Hospital"}),
            0.0,
        ),
    )


@pytest.fixture
def smith_query(smith_candidates):
    return Query(
        query_id="q-smith",
        text="electronic health records John Smith",
        candidates=smith_candidates,
    )


@pytest.fixture
def smith_run():
    return make_run(
        "q-smith",
        ["John Smith", "completely unrelated topic", "John A Smith"],
        cutoff_k=3,
    )
