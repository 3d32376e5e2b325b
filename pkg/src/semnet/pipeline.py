"""End-to-end workflow: from tagged records to per-community semantic networks.

Stages, in order::

    ingest       records, merge map, verified x non-verified retweet graph
    communities  BiCM-validated verified-user projection, Louvain, polarization
    project      per community and day: user x hashtag graph, naive projection
    validate     validated projections for each selected null model
    mesoscale    communities, core-periphery split and k-cores per projection
    metrics      node metrics, persistence tables, plot-ready time series

Every stage reads its inputs from the output directory and builds all of its
files in memory before writing any of them, so a failing stage leaves no
partial output. ``run`` executes the stages inside a scratch directory that
replaces the output directory only on success.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import platform
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .bigraph import BipartiteGraph, MonoGraph, naive_projection
from .ingest import (
    MergeMap,
    TaggedRecord,
    build_daily_hashtag_graphs,
    build_merge_map,
    build_retweet_graph,
    hashtag_counts,
    parse_records,
)
from .mesoscale import (
    detect_core_periphery,
    innermost_shell,
    kcore_decomposition,
    core_jaccard,
    louvain,
)
from .metrics import day_range, hashtag_persistence, polarization, summarize, triadic_persistence
from .nullmodels import fit_bicm, fit_model
from .validation import projection_tsv, validated_projection

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig",
    "ConfigError",
    "StageError",
    "MissingArtifact",
    "STAGES",
    "run",
    "stage",
]

MODELS = ("birgm", "bipcm", "bicm")
STAGES = ("ingest", "communities", "project", "validate", "mesoscale", "metrics")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class MissingArtifact(StageError):
    def __init__(self, stage: str, path: str):
        super().__init__(stage, f"missing upstream artifact {path}")
        self.path = path


@dataclass(frozen=True)
class PipelineConfig:
    input: Path | None
    seed: int
    out: Path = Path("out")
    format: str = "jsonl"
    merge_threshold: int = 2
    fdr_t: float = 0.05
    models: tuple[str, ...] = MODELS
    polarization_threshold: float = 0.5
    bipcm_layer: str = "bottom"
    min_community_size: int = 2
    strict: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.input is not None:
            object.__setattr__(self, "input", Path(self.input))
        object.__setattr__(self, "out", Path(self.out))
        if self.seed is None:
            raise ConfigError("a seed is required")
        if self.format not in ("jsonl", "csv"):
            raise ConfigError(f"format must be jsonl or csv, got {self.format!r}")
        if self.merge_threshold < 0:
            raise ConfigError("merge_threshold must be >= 0")
        if not 0.0 < self.fdr_t < 1.0:
            raise ConfigError("fdr_t must lie in (0, 1)")
        models = tuple(sorted({m.lower() for m in self.models}, key=MODELS.index)
                       if all(m.lower() in MODELS for m in self.models) else ())
        if not models:
            raise ConfigError(f"models must be a nonempty subset of {MODELS}, got {self.models!r}")
        object.__setattr__(self, "models", models)
        if not 0.0 <= self.polarization_threshold <= 1.0:
            raise ConfigError("polarization_threshold must lie in [0, 1]")
        if self.bipcm_layer not in ("top", "bottom"):
            raise ConfigError("bipcm_layer must be top or bottom")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def semantic(self) -> dict:
        """Settings that determine the artifacts (paths and thread count excluded)."""
        d = asdict(self)
        for key in ("input", "out", "workers"):
            d.pop(key)
        d["models"] = list(self.models)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# --- artifact store -----------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


class _Store:
    def __init__(self, root: Path, stage: str):
        self.root = Path(root)
        self.stage = stage
        self.pending: dict[str, str] = {}

    def path(self, rel: str) -> Path:
        return self.root / rel

    def read(self, rel: str) -> str:
        p = self.path(rel)
        if not p.is_file():
            raise MissingArtifact(self.stage, rel)
        return p.read_text(encoding="utf-8")

    def read_json(self, rel: str):
        return json.loads(self.read(rel))

    def put(self, rel: str, text: str) -> None:
        self.pending[rel] = text

    def commit(self) -> list[str]:
        for rel in sorted(self.pending):
            p = self.path(rel)
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(self.pending[rel], encoding="utf-8")
        return sorted(self.pending)


def _day_dirs(root: Path) -> list[str]:
    out = []
    for p in sorted(root.iterdir()) if root.is_dir() else []:
        try:
            dt.date.fromisoformat(p.name)
        except ValueError:
            continue
        out.append(p.name)
    return out


def _parallel(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --- stages ----------------------------------------------------------------------------


def _stage_ingest(cfg: PipelineConfig, st: _Store) -> None:
    if cfg.input is None:
        raise StageError("ingest", "no input file configured")
    try:
        data = cfg.input.read_bytes()
    except OSError as exc:
        raise StageError("ingest", f"cannot read input: {exc}") from exc
    report = parse_records(data, cfg.format, strict=cfg.strict)
    if not report.records:
        raise StageError("ingest", "input contains no valid records")
    records = sorted(report.records, key=lambda r: (r.timestamp, r.message_id))
    mm = build_merge_map(hashtag_counts(records), cfg.merge_threshold)
    days = sorted({r.day for r in records})
    st.put("ingest/records.jsonl",
           "".join(json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False) + "\n" for r in records))
    st.put("ingest/merge_map.json", _dumps(mm.to_json()))
    st.put("ingest/retweet_graph.tsv", build_retweet_graph(records).to_tsv())
    st.put("ingest/summary.json", _dumps({
        "records": len(records),
        "errors": [str(e) for e in report.errors],
        "first_day": days[0].isoformat(),
        "last_day": days[-1].isoformat(),
        "distinct_hashtags": len(mm.canonical),
        "canonical_hashtags": len(mm.frequencies),
    }))


def _load_records(st: _Store) -> list[TaggedRecord]:
    return parse_records(st.read("ingest/records.jsonl"), "jsonl", strict=True).records


def _stage_communities(cfg: PipelineConfig, st: _Store) -> None:
    rt = BipartiteGraph.from_tsv(st.read("ingest/retweet_graph.tsv"))
    if rt.n_edges == 0:
        raise StageError("communities", "retweet graph has no verified/non-verified edges")
    model, report = fit_bicm(rt, saturated="pin")
    if not report.converged:
        raise StageError("communities", f"BiCM did not converge (residual {report.max_residual:.3g})")
    proj, tested, fdr = validated_projection(rt, model, cfg.fdr_t, layer="top", return_details=True)
    if proj.n_edges == 0:
        raise StageError("communities", "no validated edges between verified users")
    part = louvain(proj, seed=cfg.seed)
    pol = polarization(rt, part, cfg.polarization_threshold)

    groups = part.members()
    bundles = {}
    names = {}
    for c in sorted(groups):
        verified = sorted(proj.labels[i] for i in groups[c])
        if len(verified) < cfg.min_community_size:
            continue
        name = f"c{len(names)}"
        names[c] = name
        bundles[name] = {"louvain_id": c, "verified": verified, "non_verified": []}
    for user, c in sorted(pol.assigned().items()):
        if c in names:
            bundles[names[c]]["non_verified"].append(user)
    for b in bundles.values():
        b["members"] = sorted(set(b["verified"]) | set(b["non_verified"]))

    st.put("communities/bicm_model.json", _dumps(model.to_json()))
    st.put("communities/verified_projection.tsv", projection_tsv(proj))
    st.put("communities/fdr.json", _dumps(fdr.to_json()))
    st.put("communities/partition.json", _dumps(part.to_json(proj.labels)))
    st.put("communities/polarization.json", _dumps(pol.to_json()))
    st.put("communities/members.json", _dumps(bundles))


def _members(st: _Store) -> dict:
    return st.read_json("communities/members.json")


def _stage_project(cfg: PipelineConfig, st: _Store) -> None:
    bundles = _members(st)
    records = _load_records(st)
    mm = MergeMap.from_json(st.read_json("ingest/merge_map.json"))

    def work(item):
        name, bundle = item
        daily = build_daily_hashtag_graphs(records, mm, authors=set(bundle["members"]))
        out = {}
        for day, g in daily.items():
            base = f"{day.isoformat()}/{name}"
            out[f"{base}/bipartite.tsv"] = g.to_tsv()
            out[f"{base}/naive/projection.tsv"] = naive_projection(g, "bottom").to_tsv()
        return out

    for files in _parallel(work, sorted(bundles.items()), cfg.workers):
        for rel, text in files.items():
            st.put(rel, text)


def _projection_units(st: _Store, bundles: dict) -> list[tuple[str, str]]:
    units = []
    for day in _day_dirs(st.root):
        for name in sorted(bundles):
            if st.path(f"{day}/{name}/bipartite.tsv").is_file():
                units.append((day, name))
    return units


def _stage_validate(cfg: PipelineConfig, st: _Store) -> None:
    bundles = _members(st)
    units = _projection_units(st, bundles)
    if not units:
        raise MissingArtifact("validate", "<date>/<community>/bipartite.tsv")

    def work(unit):
        day, name = unit
        g = BipartiteGraph.from_tsv(st.read(f"{day}/{name}/bipartite.tsv"))
        out = {}
        for kind in cfg.models:
            kw = {"saturated": "pin"} if kind == "bicm" else {}
            model = fit_model(g, kind, constrained_layer=cfg.bipcm_layer, **kw)
            proj, _, fdr = validated_projection(g, model, cfg.fdr_t, return_details=True)
            out[f"{day}/{name}/{kind}/projection.tsv"] = projection_tsv(proj)
            out[f"{day}/{name}/{kind}/fdr.json"] = _dumps(fdr.to_json())
        return out

    for files in _parallel(work, units, cfg.workers):
        for rel, text in files.items():
            st.put(rel, text)


def _load_projection(st: _Store, day: str, name: str, kind: str) -> MonoGraph:
    g = BipartiteGraph.from_tsv(st.read(f"{day}/{name}/bipartite.tsv"))
    return MonoGraph.from_tsv(st.read(f"{day}/{name}/{kind}/projection.tsv"), labels=g.bottom_labels)


def _projection_kinds(cfg: PipelineConfig) -> tuple[str, ...]:
    return ("naive",) + cfg.models


def _stage_mesoscale(cfg: PipelineConfig, st: _Store) -> None:
    bundles = _members(st)
    units = [(d, n, k) for d, n in _projection_units(st, bundles) for k in _projection_kinds(cfg)]
    if not units:
        raise MissingArtifact("mesoscale", "<date>/<community>/<model>/projection.tsv")

    def work(unit):
        day, name, kind = unit
        g = _load_projection(st, day, name, kind)
        report = {"node_count": g.n_nodes, "edge_count": g.n_edges}
        if g.n_edges:
            part = louvain(g, seed=cfg.seed)
            cp = detect_core_periphery(g, seed=cfg.seed)
            core = kcore_decomposition(g)
            shell = innermost_shell(core)
            report.update({
                "communities": part.to_json(g.labels),
                "core_periphery": cp.to_json(g.labels),
                "coreness": {g.labels[i]: int(c) for i, c in enumerate(core)},
                "innermost_shell_core_jaccard": core_jaccard(shell, cp.core),
            })
        return {f"{day}/{name}/{kind}/mesoscale.json": _dumps(report)}

    for files in _parallel(work, units, cfg.workers):
        for rel, text in files.items():
            st.put(rel, text)


def _stage_metrics(cfg: PipelineConfig, st: _Store) -> None:
    bundles = _members(st)
    summary = st.read_json("ingest/summary.json")
    corpus_days = day_range([dt.date.fromisoformat(summary["first_day"]),
                             dt.date.fromisoformat(summary["last_day"])])
    units = _projection_units(st, bundles)
    if not units:
        raise MissingArtifact("metrics", "<date>/<community>/<model>/projection.tsv")

    def work(unit):
        day, name = unit
        out = {}
        for kind in _projection_kinds(cfg):
            g = _load_projection(st, day, name, kind)
            meso = st.read_json(f"{day}/{name}/{kind}/mesoscale.json")
            rep = summarize(g).to_json()
            out[f"{day}/{name}/{kind}/metrics.json"] = _dumps(rep)
            roles = meso.get("core_periphery", {}).get("labels", {})
            out[(name, kind, day)] = (
                g,
                rep["node_count"],
                rep["mean_degree"],
                sum(1 for r in roles.values() if r == "core"),
                sum(1 for r in roles.values() if r == "periphery"),
            )
        return out

    rows: dict[tuple[str, str], list] = {}
    graphs: dict[tuple[str, str], dict] = {}
    for files in _parallel(work, units, cfg.workers):
        for key, val in files.items():
            if isinstance(key, str):
                st.put(key, val)
                continue
            name, kind, day = key
            g, n, mean_deg, core_n, per_n = val
            rows.setdefault((name, kind), []).append((day, n, mean_deg, core_n, per_n))
            graphs.setdefault((name, kind), {})[dt.date.fromisoformat(day)] = g

    for name in sorted(bundles):
        bip = {}
        for day, n in units:
            if n == name:
                bip[dt.date.fromisoformat(day)] = BipartiteGraph.from_tsv(st.read(f"{day}/{name}/bipartite.tsv"))
        if not bip:
            continue
        st.put(f"persistence/{name}/hashtag_persistence.tsv",
               hashtag_persistence(bip, corpus_days).to_tsv())
        for kind in _projection_kinds(cfg):
            tri = triadic_persistence(graphs.get((name, kind), {}), corpus_days)
            st.put(f"persistence/{name}/triadic_persistence_{kind}.tsv", tri.to_tsv())
            lines = ["date,node_count,mean_degree,core_size,periphery_size\n"]
            for day, n, mean_deg, core_n, per_n in sorted(rows.get((name, kind), [])):
                lines.append(f"{day},{n},{mean_deg!r},{core_n},{per_n}\n")
            st.put(f"persistence/{name}/timeseries_{kind}.csv", "".join(lines))


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "communities": _stage_communities,
    "project": _stage_project,
    "validate": _stage_validate,
    "mesoscale": _stage_mesoscale,
    "metrics": _stage_metrics,
}


def stage(name: str, config: PipelineConfig, root: Path | None = None) -> list[str]:
    """Run one stage against the artifacts already under the output directory.

    Returns the relative paths written. Nothing is written if the stage fails.
    """
    if name not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {name!r}; expected one of {STAGES}")
    st = _Store(root if root is not None else config.out, name)
    try:
        _STAGE_FUNCS[name](config, st)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    return st.commit()


def _sha256_file(p: Path) -> str:
    return hashlib.sha256(p.read_bytes()).hexdigest()


def _manifest(config: PipelineConfig, root: Path) -> dict:
    artifacts = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            artifacts[p.relative_to(root).as_posix()] = _sha256_file(p)
    bundles = json.loads((root / "communities/members.json").read_text(encoding="utf-8"))
    return {
        "inputs": [{"path": config.input.name, "sha256": _sha256_file(config.input)}],
        "config": config.semantic(),
        "config_hash": config.config_hash(),
        "versions": {
            "semnet": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "communities": [
            {"id": name, "verified": len(b["verified"]), "members": len(b["members"])}
            for name, b in sorted(bundles.items())
        ],
        "artifacts": artifacts,
    }


def run(config: PipelineConfig) -> list[str]:
    """Run every stage in order and write the manifest.

    Work happens in a scratch directory next to ``config.out``; on success it
    replaces the output directory, on failure it is deleted.
    """
    if config.input is None:
        raise ConfigError("run needs an input file")
    out = config.out.resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name in STAGES:
            logger.info("stage %s", name)
            stage(name, config, root=scratch)
        manifest = _manifest(config, scratch)
        (scratch / "manifest.json").write_text(_dumps(manifest), encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        os.replace(scratch, out)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    return sorted(manifest["artifacts"]) + ["manifest.json"]
