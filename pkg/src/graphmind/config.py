"""Application configuration: one TOML key tree with a section per component.

Precedence, lowest first: built-in defaults, the config file, environment
variables, explicit overrides (CLI flags). Relative paths resolve against the
directory of the config file, or the working directory when there is none.
"""

from __future__ import annotations

import copy
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from graphmind.errors import ConfigError
from graphmind.graph import VertexKind
from graphmind.llmio import (
    ENV_CACHE_PATH,
    ENV_LLM_MODEL,
    ENV_LLM_URL,
    GenerationConfig,
    HttpBackend,
    LlmBackend,
    LlmGateway,
    ResponseCache,
    ScriptedBackend,
)
from graphmind.qa import PipelineConfig
from graphmind.traverse import (
    BeamConfig,
    NaiveConfig,
    RerankConfig,
    Restriction,
    RetrievalConfig,
    WaterConfig,
)
from graphmind.vecindex import Embedder, HashingEmbedder, HttpEmbedder

DEFAULTS: dict[str, Any] = {
    "graph": {"snapshot": "graph.snapshot"},
    "llm": {
        "backend": "scripted",  # "scripted" or "http"
        "script": "",
        "url": "http://localhost:11434/api/chat",
        "model": "",
        "cache": "llm-cache.txt",
        "timeout": 300.0,
        "max_tokens": 2048,
        "seed": 42,
        "temperature": 0.0,
        "top_k": 1,
    },
    "embedder": {
        "kind": "hashing",  # "hashing" or "http"
        "dim": 64,
        "url": "http://localhost:11434/api/embeddings",
        "model": "",
    },
    "memorize": {"max_chars": 1024},
    "qa": {
        "max_steps": 8,
        "max_clue_queries": 4,
        "max_matched_vertices": 3,
        "max_filtered_triples": 25,
        "enable_preprocess": False,
        "enable_plan_enhancement": True,
        "combo": "BS_WC",
        "restriction": "all",
        "answer_kinds": ["Object", "Thesis"],
        "parallelism": 0,
    },
    "traverse": {
        "beam": {
            "max_depth": 5,
            "max_paths": 10,
            "same_path_intersection_by_node": False,
            "diff_paths_intersection_by_node": False,
            "diff_paths_intersection_by_rel": False,
            "mean_alpha": 0.75,
            "final_sorting_mode": "mixed",
            "rerank": {"enabled": True, "threshold": 0.5, "fetch_n": 25},
        },
        "water": {
            "strict_filter": True,
            "hyper_num": 15,
            "episodic_num": 15,
            "chain_triplets_num": 25,
            "other_triplets_num": 6,
            "do_text_pruning": False,
        },
        "naive": {"max_k": 50, "rerank": {"threshold": 0.5, "fetch_n": 50}},
    },
}

ENV_KEYS = {ENV_LLM_URL: "llm.url", ENV_LLM_MODEL: "llm.model", ENV_CACHE_PATH: "llm.cache"}


def _check_type(key: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def _merge(base: dict[str, Any], patch: Mapping[str, Any], prefix: str = "") -> None:
    for key, value in patch.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{dotted}: expected a table")
            _merge(base[key], value, dotted + ".")
        else:
            base[key] = _check_type(dotted, base[key], value)


def _nest(dotted: Mapping[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key, value in dotted.items():
        node = tree
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return tree


@dataclass
class AppConfig:
    data: dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, tree: Mapping[str, Any], base_dir: Path | None = None) -> AppConfig:
        data = copy.deepcopy(DEFAULTS)
        _merge(data, tree)
        cfg = cls(data, base_dir or Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(
        cls,
        path: str | os.PathLike | None = None,
        env: Mapping[str, str] | None = None,
        overrides: Mapping[str, Any] | None = None,
    ) -> AppConfig:
        """Defaults, then the file, then environment variables, then dotted-key overrides."""
        data = copy.deepcopy(DEFAULTS)
        base_dir = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                tree = tomli.loads(path.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            _merge(data, tree)
            base_dir = path.resolve().parent
        env = os.environ if env is None else env
        _merge(data, _nest({key: env[var] for var, key in ENV_KEYS.items() if env.get(var)}))
        _merge(data, _nest({k: v for k, v in (overrides or {}).items() if v is not None}))
        cfg = cls(data, base_dir)
        cfg.validate()
        return cfg

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def validate(self) -> None:
        try:
            self.pipeline_config()
            self.generation_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.data["llm"]["backend"] not in ("scripted", "http"):
            raise ConfigError(f"llm.backend must be 'scripted' or 'http', not {self.data['llm']['backend']!r}")
        if self.data["embedder"]["kind"] not in ("hashing", "http"):
            raise ConfigError(f"embedder.kind must be 'hashing' or 'http', not {self.data['embedder']['kind']!r}")

    def resolve(self, value: str) -> Path:
        path = Path(value).expanduser()
        return path if path.is_absolute() else self.base_dir / path

    @property
    def snapshot_path(self) -> Path:
        return self.resolve(self.data["graph"]["snapshot"])

    @property
    def cache_path(self) -> Path | None:
        value = self.data["llm"]["cache"]
        return self.resolve(value) if value else None

    # -- typed views ---------------------------------------------------------

    def generation_config(self) -> GenerationConfig:
        llm = self.data["llm"]
        return GenerationConfig(llm["max_tokens"], llm["seed"], llm["temperature"], llm["top_k"])

    def retrieval_config(self) -> RetrievalConfig:
        tr = self.data["traverse"]
        beam = dict(tr["beam"])
        rerank = beam.pop("rerank")
        beam_rerank = RerankConfig(rerank["threshold"], rerank["fetch_n"]) if rerank["enabled"] else None
        naive = tr["naive"]
        return RetrievalConfig(
            beam=BeamConfig(**beam, rerank=beam_rerank),
            water=WaterConfig(**tr["water"]),
            naive=NaiveConfig(naive["max_k"], RerankConfig(naive["rerank"]["threshold"], naive["rerank"]["fetch_n"])),
        )

    def pipeline_config(self) -> PipelineConfig:
        qa = dict(self.data["qa"])
        qa["restriction"] = Restriction.parse(qa["restriction"])
        qa["answer_kinds"] = frozenset(VertexKind(k) for k in qa["answer_kinds"])
        return PipelineConfig(**qa, retrieval=self.retrieval_config())

    # -- factories -------------------------------------------------------------

    def build_backend(self) -> LlmBackend:
        llm = self.data["llm"]
        if llm["backend"] == "http":
            if not llm["model"]:
                raise ConfigError(f"llm.model is required for the http backend (or set {ENV_LLM_MODEL})")
            return HttpBackend(llm["url"], llm["model"], timeout=llm["timeout"])
        if not llm["script"]:
            raise ConfigError("llm.script is required for the scripted backend")
        script = self.resolve(llm["script"])
        if not script.is_file():
            raise ConfigError(f"scripted backend fixture not found: {script}")
        return ScriptedBackend.from_jsonl(script)

    def build_gateway(self) -> LlmGateway:
        return LlmGateway(self.build_backend(), ResponseCache(self.cache_path), config=self.generation_config())

    def build_embedder(self) -> Embedder:
        emb = self.data["embedder"]
        if emb["kind"] == "http":
            if not emb["model"]:
                raise ConfigError("embedder.model is required for the http embedder")
            return HttpEmbedder(emb["url"], emb["model"])
        return HashingEmbedder(emb["dim"])
