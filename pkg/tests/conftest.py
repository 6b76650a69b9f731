import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from csts.graph import (  # noqa: E402
    CanonicalEntity,
    CanonicalRelationship,
    EntityType,
    GraphDelta,
    LifecycleState,
    Provenance,
    RelationshipType,
    SourceLineage,
    SubstrateGraph,
    TransitionOp,
)

E, R = EntityType, RelationshipType


def ent(eid, etype, t0=0, t1=None, **attrs):
    return CanonicalEntity(eid, etype, dict(attrs), [SourceLineage("test", "adapter:test")], t0, t1)


def edge(src, dst, rel, t, source="test", confidence=1.0, **attrs):
    prov = Provenance(source, 0, t, confidence, ("adapter:test", "resolve"))
    return CanonicalRelationship(src, dst, rel, t, prov, attrs)


def build(entities, edges, at=0):
    """One delta with every entity (activated) followed by one delta per edge."""
    g = SubstrateGraph()
    g.apply(GraphDelta(at, entity_upserts=list(entities),
                       lifecycle_transitions=[TransitionOp(e.id, LifecycleState.ACTIVE, at) for e in entities]))
    for r in sorted(edges, key=lambda r: r.start if isinstance(r.time, int) else r.time[0]):
        g.insert_edge(r)
    return g


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def repro_out(tmp_path_factory):
    """One full default run shared by the acceptance and CLI tests; also returns its wall time."""
    import time

    from csts.experiment import ExperimentConfig, repro

    out = tmp_path_factory.mktemp("repro")
    t0 = time.perf_counter()
    summary = repro(ExperimentConfig(), out)
    return out, summary, time.perf_counter() - t0


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """Short synthetic corpus (both tasks, both envs) for module-level tests."""
    from csts.experiment import ExperimentConfig, synth_stage

    out = tmp_path_factory.mktemp("small")
    cfg = ExperimentConfig(duration_hours=48.0, bootstrap=200)
    synth_stage(cfg, out)
    return cfg, out
