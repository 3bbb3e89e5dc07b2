from __future__ import annotations

import random
import shutil
import sys
from pathlib import Path

import pytest

from graphmind.errors import KindMismatch
from graphmind.graph import EdgeKind, MemoryGraph, VertexKind

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"
WORKED = FIXTURES / "worked_example"

WORKED_QUESTION = (
    "Do both films Payment On Demand and My Cousin From Warsaw have the directors from the same country?"
)

WORDS = (
    "river stone castle garden violin harbor falcon meadow copper lantern orchard "
    "glacier saddle temple canyon ember willow quartz prairie beacon summit tundra "
    "harvest marble compass thunder velvet cedar island forge"
).split()
PREDICATES = "founded near owns visited built wrote painted guards borders crossed".split()


def random_graph(rng: random.Random, n_objects: int, n_edges: int) -> MemoryGraph:
    """Random typed graph obeying the edge-kind contract."""
    g = MemoryGraph()
    names = set()
    while len(names) < n_objects:
        names.add(" ".join(rng.sample(WORDS, rng.randint(1, 3))))
    objects = [g.upsert_vertex(VertexKind.OBJECT, n) for n in sorted(names)]
    theses = [
        g.upsert_vertex(VertexKind.THESIS, f"The {rng.choice(WORDS)} {rng.choice(PREDICATES)} the {rng.choice(WORDS)} {i}.")
        for i in range(max(1, n_objects // 5))
    ]
    episodes = [
        g.upsert_vertex(VertexKind.EPISODIC, " ".join(rng.choices(WORDS, k=12)) + f". Record {i}.")
        for i in range(max(1, n_objects // 8))
    ]
    attempts = 0
    while g.edge_count < n_edges and attempts < n_edges * 5:
        attempts += 1
        roll = rng.random()
        try:
            if roll < 0.6:
                g.link(EdgeKind.SIMPLE, rng.choice(objects), rng.choice(objects), rng.choice(PREDICATES))
            elif roll < 0.75:
                g.link(EdgeKind.HYPER_THESIS, rng.choice(objects), rng.choice(theses))
            else:
                src = rng.choice(objects + theses)
                g.link(EdgeKind.HYPER_EPISODIC, src, rng.choice(episodes))
        except KindMismatch:
            continue
    return g


@pytest.fixture
def worked_dir(tmp_path: Path) -> Path:
    """A scratch copy of the worked-example fixture with the corpus memorized."""
    from click.testing import CliRunner

    from graphmind.cli import main

    work = tmp_path / "worked"
    shutil.copytree(WORKED, work, ignore=shutil.ignore_patterns("*.snapshot", "*cache*.txt", "__pycache__"))
    result = CliRunner().invoke(main, ["--config", str(work / "memorize.toml"), "memorize", str(work / "corpus.jsonl")])
    assert result.exit_code == 0, result.output
    return work


def synthetic_corpus(rng: random.Random, n_docs: int):
    """Documents plus a lookup of scripted extraction output per document text.

    Entities repeat across documents so later ingests hit existing vertices,
    and some outputs carry malformed lines.
    """
    from graphmind.memorize import Document

    entities = [" ".join(p).title() for p in zip(WORDS, reversed(WORDS))][:25]
    docs, simple, thesis = [], {}, {}
    for i in range(n_docs):
        picks = rng.sample(entities, 3)
        text = f"Record {i}: {picks[0]} {rng.choice(PREDICATES)} {picks[1]} and {picks[2]}."
        lines = [f"{picks[0]} | {rng.choice(PREDICATES)} | {picks[j]}" for j in (1, 2)]
        if rng.random() < 0.2:
            lines.append("this line is not a triple")
        simple[text] = "\n".join(lines)
        thesis[text] = f"{picks[0]} | has thesis | {picks[0]} is mentioned in record {i % 7}."
        docs.append(Document(f"doc{i:03d}", text, {"n": str(i)}))
    return docs, simple, thesis


def extraction_backend(simple: dict[str, str], thesis: dict[str, str]):
    from graphmind.llmio import FunctionBackend

    def respond(request):
        table = simple if request.template == "simple_extract" else thesis
        return table[request.bindings["text"]]

    return FunctionBackend(respond, backend_id="extraction-fixture")


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}")
