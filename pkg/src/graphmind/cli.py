"""``graphmind`` command line: memorize, ask, eval, stats.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any

import click

from graphmind.config import AppConfig
from graphmind.errors import CorruptSnapshot, GraphMindError, InvalidDocument
from graphmind.graph import EdgeKind, GraphStats, MemoryGraph, VertexKind
from graphmind.judge import evaluate_dataset
from graphmind.memorize import Memorizer, build_index, read_corpus
from graphmind.qa import QaPipeline
from graphmind.traverse import Combo

logger = logging.getLogger("graphmind")


class Failure(click.ClickException):
    exit_code = 1


def _load_config(ctx: click.Context, overrides: dict[str, Any] | None = None) -> AppConfig:
    try:
        return AppConfig.load(ctx.obj["config_path"], overrides=overrides)
    except GraphMindError as exc:
        raise Failure(str(exc)) from exc


def _load_graph(cfg: AppConfig, must_exist: bool) -> MemoryGraph:
    path = cfg.snapshot_path
    if not path.exists():
        if must_exist:
            raise Failure(f"no graph snapshot at {path}; run 'graphmind memorize' first")
        return MemoryGraph()
    try:
        return MemoryGraph.load_snapshot(path)
    except (OSError, CorruptSnapshot) as exc:
        raise Failure(f"cannot load snapshot {path}: {exc}") from exc


def _pipeline(cfg: AppConfig) -> QaPipeline:
    graph = _load_graph(cfg, must_exist=True)
    try:
        index = build_index(graph, cfg.build_embedder())
        return QaPipeline(graph, index, cfg.build_gateway(), cfg.pipeline_config())
    except GraphMindError as exc:
        raise Failure(str(exc)) from exc


def _qa_overrides(no_enhance: bool, combo: str | None, restriction: str | None) -> dict[str, Any]:
    return {
        "qa.enable_plan_enhancement": False if no_enhance else None,
        "qa.combo": combo,
        "qa.restriction": restriction,
    }


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def format_stats(stats: GraphStats) -> str:
    """Fixed-order plain-text table of counts and degree moments."""
    lines = ["section\tkind\tcount"]
    lines += [f"vertices\t{k.value}\t{stats.vertices[k]}" for k in VertexKind]
    lines += [f"edges\t{k.value}\t{stats.edges[k]}" for k in EdgeKind]
    lines.append("")
    lines.append("degree\tsource->neighbour\tmean\tstd")
    for src in VertexKind:
        for dst in VertexKind:
            mean, std = stats.degrees[(src, dst)]
            lines.append(f"degree\t{src.value}->{dst.value}\t{mean:.4f}\t{std:.4f}")
    return "\n".join(lines)


_combo_choice = click.Choice([c.value for c in Combo])


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML config file.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, verbose: bool) -> None:
    """Typed memory graph with plan-driven question answering."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command()
@click.argument("corpus", type=click.Path(dir_okay=False))
@click.pass_context
def memorize(ctx: click.Context, corpus: str) -> None:
    """Ingest a JSONL corpus of {"doc_id", "text", "meta"?} records."""
    cfg = _load_config(ctx)
    if not Path(corpus).is_file():
        raise Failure(f"cannot read corpus {corpus}")
    graph = _load_graph(cfg, must_exist=False)
    try:
        memorizer = Memorizer(
            graph, build_index(graph, cfg.build_embedder()), cfg.build_gateway(), cfg.data["memorize"]["max_chars"]
        )
    except GraphMindError as exc:
        raise Failure(str(exc)) from exc

    totals_v = {k: 0 for k in VertexKind}
    totals_e = {k: 0 for k in EdgeKind}
    docs = skipped_triples = parse_failures = bad_lines = 0
    failure: GraphMindError | None = None
    for lineno, item in read_corpus(corpus):
        if isinstance(item, str):
            click.echo(f"skipped {item}", err=True)
            bad_lines += 1
            continue
        try:
            report = memorizer.memorize_document(item)
        except InvalidDocument as exc:
            click.echo(f"skipped line {lineno}: {exc}", err=True)
            bad_lines += 1
            continue
        except GraphMindError as exc:
            failure = exc
            break
        docs += 1
        skipped_triples += report.skipped_triples
        parse_failures += report.parse_failed
        for k, n in report.new_vertices.items():
            totals_v[k] += n
        for k, n in report.new_edges.items():
            totals_e[k] += n

    graph.save_snapshot(cfg.snapshot_path)
    for k in VertexKind:
        click.echo(f"new vertices\t{k.value}\t{totals_v[k]}")
    for k in EdgeKind:
        click.echo(f"new edges\t{k.value}\t{totals_e[k]}")
    click.echo(f"documents\t{docs}")
    click.echo(f"skipped triples\t{skipped_triples}")
    click.echo(f"parse failures\t{parse_failures}")
    click.echo(f"bad lines\t{bad_lines}")
    if failure is not None:
        raise Failure(f"backend failure, stopped after {docs} documents: {failure}")


@main.command()
@click.argument("question")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None, help="Write the answer trace JSON here.")
@click.option("--no-enhance", is_flag=True, help="Disable plan enhancement.")
@click.option("--combo", type=_combo_choice, default=None, help="Retriever combination.")
@click.option("--restriction", default=None, help="'all', 'E' (no episodic vertices) or a comma list of kinds.")
@click.pass_context
def ask(ctx: click.Context, question: str, trace_path: str | None, no_enhance: bool, combo: str | None, restriction: str | None) -> None:
    """Answer a question from the memory graph."""
    cfg = _load_config(ctx, _qa_overrides(no_enhance, combo, restriction))
    pipeline = _pipeline(cfg)
    try:
        answer, trace = pipeline.answer(question)
    except (GraphMindError, ValueError) as exc:
        partial = getattr(exc, "partial_trace", None)
        if trace_path and partial is not None:
            _write_json(Path(trace_path), partial.to_dict())
        raise Failure(str(exc)) from exc
    if trace_path:
        _write_json(Path(trace_path), trace.to_dict())
    click.echo(answer)


@main.command(name="eval")
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write the report here instead of stdout.")
@click.option("--trace", "with_traces", is_flag=True, help="Embed per-example answer traces in the report.")
@click.option("--no-enhance", is_flag=True, help="Disable plan enhancement.")
@click.option("--combo", type=_combo_choice, default=None, help="Retriever combination.")
@click.option("--restriction", default=None, help="'all', 'E' or a comma list of kinds.")
@click.pass_context
def eval_cmd(
    ctx: click.Context,
    dataset: str,
    out_path: str | None,
    with_traces: bool,
    no_enhance: bool,
    combo: str | None,
    restriction: str | None,
) -> None:
    """Answer and judge every example of a JSONL dataset."""
    cfg = _load_config(ctx, _qa_overrides(no_enhance, combo, restriction))
    if not Path(dataset).is_file():
        raise Failure(f"cannot read dataset {dataset}")
    pipeline = _pipeline(cfg)
    try:
        report = evaluate_dataset(dataset, pipeline, include_traces=with_traces, width=cfg.data["qa"]["parallelism"])
    except (GraphMindError, ValueError) as exc:
        raise Failure(str(exc)) from exc
    text = report.to_json()
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command()
@click.pass_context
def stats(ctx: click.Context) -> None:
    """Print vertex/edge counts and degree moments."""
    cfg = _load_config(ctx)
    graph = _load_graph(cfg, must_exist=True)
    click.echo(format_stats(graph.stats()))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
