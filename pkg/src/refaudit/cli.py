"""Command-line driver: synthesize, generate, audit, explain, consensus, report.

Every stage reads its inputs from and writes its outputs to one output
directory, so stages can be rerun independently. Each stage also writes a
``manifests/<stage>.json`` carrying the hash of the effective configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

from . import __version__
from . import charts
from . import consensus_analysis as ca
from . import fairness_stats as fs
from .corpus_store import balance, config_hash, finalize, load_corpus, save_corpus, write_balance_csv
from .errors import AuditError, ConfigurationError, InputError, TransportExhausted
from .learners import KINDS
from .llm_gateway import STATUS_OK, GenerationConfig, run_campaign, transport_from_spec, write_records
from .persona_synth import build_cohort, write_cohort
from .query_builder import build_batch, load_roster, read_queries, write_queries

log = logging.getLogger("refaudit")

STAGES = ("synthesize", "generate", "audit", "explain", "consensus", "report")
# radar spoke order, reference class (Undergraduate) excluded
RADAR_AXES = ("Graduate", "Faculty", "Staff", "Alumni", "Outside")


@dataclass
class ModelSpec:
    model_id: str
    transport: str = "mock:null_bias:0"
    generation: dict = field(default_factory=dict)


@dataclass
class AuditSettings:
    k: int | None = None
    alpha: float = fs.ALPHA
    m: int = fs.PHASE1_COMPARISONS
    min_abs_beta: float = fs.MIN_ABS_BETA
    seed: int = 0
    dimensions: tuple = fs.DIMENSIONS
    classifiers: tuple = KINDS
    always_explain: bool = False


@dataclass
class RunConfig:
    models: list[ModelSpec]
    generation: dict = field(default_factory=dict)
    audit: AuditSettings = field(default_factory=AuditSettings)
    consensus_dimension: str = "patron_type"
    min_models: int = ca.MIN_MODELS
    max_radar: int = 3
    output_dir: str = "refaudit-out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {"models", "generation", "audit", "consensus", "report", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        raw_models = d.get("models") or []
        if not raw_models:
            raise ConfigurationError("config lists no models")
        models = []
        for m in raw_models:
            if "model_id" not in m:
                raise ConfigurationError("every model needs a model_id")
            extra = set(m) - {"model_id", "transport", "generation"}
            if extra:
                raise ConfigurationError(f"unknown model keys {sorted(extra)}")
            models.append(ModelSpec(str(m["model_id"]), m.get("transport", "mock:null_bias:0"),
                                    dict(m.get("generation", {}))))
        ids = [m.model_id for m in models]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("model ids must be unique")
        a = dict(d.get("audit", {}))
        bad = set(a) - set(AuditSettings.__dataclass_fields__)
        if bad:
            raise ConfigurationError(f"unknown audit keys {sorted(bad)}")
        for key in ("dimensions", "classifiers"):
            if key in a:
                a[key] = tuple(a[key])
        audit = AuditSettings(**a)
        if set(audit.dimensions) - set(fs.DIMENSIONS):
            raise ConfigurationError(f"unknown dimensions {sorted(set(audit.dimensions) - set(fs.DIMENSIONS))}")
        if set(audit.classifiers) - set(KINDS):
            raise ConfigurationError(f"unknown classifiers {sorted(set(audit.classifiers) - set(KINDS))}")
        if not 0 < audit.alpha < 1 or audit.m < 1:
            raise ConfigurationError("alpha must lie in (0, 1) and m must be >= 1")
        cons = dict(d.get("consensus", {}))
        rep = dict(d.get("report", {}))
        cfg = cls(models, dict(d.get("generation", {})), audit,
                  cons.get("dimension", "patron_type"), int(cons.get("min_models", ca.MIN_MODELS)),
                  int(rep.get("max_radar", 3)), str(d.get("output_dir", "refaudit-out")))
        if cfg.consensus_dimension not in fs.DIMENSIONS:
            raise ConfigurationError(f"unknown consensus dimension {cfg.consensus_dimension!r}")
        for spec in models:
            cfg.generation_for(spec)  # validate early
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(d)

    def generation_for(self, spec: ModelSpec) -> GenerationConfig:
        merged = {**self.generation, **spec.generation, "model_id": spec.model_id}
        return GenerationConfig.from_dict(merged)

    @property
    def seeds(self) -> tuple[int, ...]:
        return GenerationConfig.from_dict(self.generation).seeds

    def to_dict(self) -> dict:
        a = asdict(self.audit)
        a["dimensions"], a["classifiers"] = list(a["dimensions"]), list(a["classifiers"])
        return {
            "models": [asdict(m) for m in self.models],
            "generation": self.generation,
            "audit": a,
            "consensus": {"dimension": self.consensus_dimension, "min_models": self.min_models},
            "report": {"max_radar": self.max_radar},
        }

    @property
    def hash(self) -> str:
        # the output location is left out so a bundle can be regenerated elsewhere
        return config_hash(self.to_dict())


def safe_name(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", model_id)


class Layout:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def queries(self, seed: int) -> Path:
        return self.path("queries", f"seed_{seed}.queries.jsonl")

    def cohort(self, seed: int) -> Path:
        return self.path("queries", f"seed_{seed}.cohort.jsonl")

    def raw(self, model_id: str) -> Path:
        return self.path("corpus", f"{safe_name(model_id)}.raw.jsonl")

    def salience(self, model_id: str, dim: str) -> Path:
        return self.path("models", safe_name(model_id), f"salience_{dim}.csv")

    def chart(self, name: str) -> Path:
        return self.path("charts", f"{name}.svg")


def write_manifest(layout: Layout, cfg: RunConfig, stage: str, outputs: Sequence[Path], **extra) -> None:
    rel = sorted(str(p.relative_to(layout.root)) for p in outputs)
    doc = {"stage": stage, "config_hash": cfg.hash, "version": __version__, "outputs": rel, **extra}
    layout.path("manifests", f"{stage}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- stages ---------------------------------------------------------------

def stage_synthesize(cfg: RunConfig, layout: Layout) -> list[Path]:
    gen = GenerationConfig.from_dict(cfg.generation)
    roster = load_roster()
    out = []
    for seed in gen.seeds:
        cohort = build_cohort(gen.per_seed_count, seed)
        batch_seed = _batch_seed(seed)
        queries = build_batch(cohort, roster, batch_seed)
        write_cohort(cohort, layout.cohort(seed))
        write_queries(queries, layout.queries(seed))
        out += [layout.cohort(seed), layout.queries(seed)]
    write_manifest(layout, cfg, "synthesize", out, seeds=list(gen.seeds), per_seed_count=gen.per_seed_count)
    return out


def _batch_seed(seed: int) -> int:
    # same derivation as the gateway's default batch builder
    import numpy as np

    return int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])


def _file_batch_builder(layout: Layout):
    def builder(seed: int, n: int):
        path = layout.root / "queries" / f"seed_{seed}.queries.jsonl"
        if not path.exists():
            raise InputError(f"{path} missing; run 'synthesize' first")
        queries = read_queries(path)
        if len(queries) < n:
            raise InputError(f"{path} holds {len(queries)} queries, {n} requested")
        return queries[:n]

    return builder


def stage_generate(cfg: RunConfig, layout: Layout, sleep=time.sleep) -> list[Path]:
    builder = _file_batch_builder(layout)
    out = []
    counts = {}
    for spec in cfg.models:
        gen = cfg.generation_for(spec)
        transport = transport_from_spec(spec.transport, gen)
        records = run_campaign(builder, gen, transport, sleep=sleep)
        write_records(records, layout.raw(spec.model_id))
        n_ok = sum(r.status == STATUS_OK for r in records)
        if n_ok == 0:
            raise TransportExhausted(f"every request to {spec.model_id} failed after retries")
        corpus = finalize(records)
        corpus.model_id = safe_name(corpus.model_id)
        saved = save_corpus(corpus, layout.root / "corpus", cfg.to_dict())
        bal = layout.path("corpus", f"{safe_name(spec.model_id)}.balance.csv")
        write_balance_csv([balance(corpus, a) for a in fs.DIMENSIONS], bal)
        out += [layout.raw(spec.model_id), saved, bal]
        counts[spec.model_id] = {"requests": len(records), "ok": n_ok, "kept": len(corpus)}
    write_manifest(layout, cfg, "generate", out, records=counts)
    return out


def _load(cfg: RunConfig, layout: Layout, spec: ModelSpec):
    path = layout.root / "corpus" / f"{safe_name(spec.model_id)}.jsonl"
    if not path.exists():
        raise InputError(f"{path} missing; run 'generate' first")
    return load_corpus(path)


def stage_audit(cfg: RunConfig, layout: Layout) -> list[Path]:
    a = cfg.audit
    rows = []
    for spec in cfg.models:
        corpus = _load(cfg, layout, spec)
        for v in fs.audit(corpus, a.dimensions, a.classifiers, a.k, a.alpha, a.m, a.seed):
            rows.append((spec.model_id, v))
    path = layout.path("verdicts.csv")
    fs.write_verdicts(rows, path)
    write_manifest(layout, cfg, "audit", [path])
    return [path]


def _verdicts(layout: Layout) -> list[dict]:
    path = layout.root / "verdicts.csv"
    if not path.exists():
        raise InputError(f"{path} missing; run 'audit' first")
    return fs.read_verdicts(path)


def stage_explain(cfg: RunConfig, layout: Layout, always: bool | None = None) -> list[Path]:
    a = cfg.audit
    always = a.always_explain if always is None else always
    verdicts = _verdicts(layout)
    out = []
    done = {}
    for spec in cfg.models:
        flagged = {r["dimension"] for r in verdicts if r["model"] == spec.model_id and r["significant"] == "1"}
        dims = [d for d in a.dimensions if always or d in flagged]
        done[spec.model_id] = dims
        if not dims:
            continue
        corpus = _load(cfg, layout, spec)
        for dim in dims:
            fit = fs.phase2_fit(corpus, dim, a.k)
            feats = fs.salient_from_fit(fit, a.alpha, min_abs_beta=a.min_abs_beta)
            path = layout.salience(spec.model_id, dim)
            fs.write_salience(feats, path)
            m = len(fit.terms) * len(fit.comparison_classes)
            chart = layout.chart(f"volcano_{safe_name(spec.model_id)}_{dim}")
            charts.write_chart(charts.volcano_spec(feats, a.alpha, m, a.min_abs_beta,
                                                   f"{spec.model_id}: {dim}"), chart)
            out += [path, chart, chart.with_suffix(".csv")]
    write_manifest(layout, cfg, "explain", out, explained=done)
    return out


def _salience_by_model(cfg: RunConfig, layout: Layout, dim: str) -> dict:
    found = {}
    for spec in cfg.models:
        path = layout.root / "models" / safe_name(spec.model_id) / f"salience_{dim}.csv"
        if path.exists():
            found[spec.model_id] = fs.read_salience(path)
    return found


def stage_consensus(cfg: RunConfig, layout: Layout) -> list[Path]:
    dim = cfg.consensus_dimension
    salience = _salience_by_model(cfg, layout, dim)
    mpath, gpath, apath = layout.path("consensus_matrix.csv"), layout.path("merges.csv"), layout.path("aggregation.csv")
    npath = layout.path("dendrogram.txt")
    chart = layout.chart(f"heatmap_{dim}")
    reference = fs.REFERENCE_CLASS[dim]
    if len(salience) < 2:
        status = "skipped"
        cm = ca.ConsensusMatrix([], list(salience), *_empty_arrays(len(salience)))
        table = ca.AggregationTable(reference)
    else:
        status = "ok"
        cm = ca.consensus(salience, cfg.min_models)
        table = ca.aggregate(salience, reference, cm.features)
    ca.write_matrix(cm, mpath)
    ca.write_merges(cm.dendrogram, gpath)
    ca.write_aggregation(table, apath)
    npath.write_text((cm.dendrogram.to_nested() if cm.dendrogram else "()") + "\n", encoding="utf-8")
    charts.write_chart(charts.heatmap_spec(cm, f"consensus terms: {dim}"), chart)
    out = [mpath, gpath, apath, npath, chart, chart.with_suffix(".csv")]
    write_manifest(layout, cfg, "consensus", out, status=status, dimension=dim, models=sorted(salience))
    return out


def _empty_arrays(n_models: int):
    import numpy as np

    return np.zeros((0, n_models)), np.zeros((0, n_models))


def read_radar_csv(path: str | Path) -> dict[str, dict[str, list]]:
    """Radar table with columns feature, model and one column per patron type.

    Cells holding ``---`` or left empty are missing. Leading ``+`` signs and
    the typographic minus are accepted.
    """
    out: dict[str, dict[str, list]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = {"feature", "model", *RADAR_AXES} - set(cols)
        if missing:
            raise InputError(f"radar table lacks columns {sorted(missing)}")
        for r in reader:
            vals = []
            for a in RADAR_AXES:
                cell = r[a].strip().replace("−", "-")
                if cell in ("", "---", "NA"):
                    vals.append(None)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InputError(f"bad radar value {r[a]!r} for {r['feature']}/{r['model']}") from None
            out.setdefault(r["feature"], {})[r["model"]] = vals
    return out


def _pipeline_radar(cfg: RunConfig, layout: Layout) -> dict[str, dict[str, list]]:
    salience = _salience_by_model(cfg, layout, "patron_type")
    if not salience:
        return {}
    counts = {}
    for feats in salience.values():
        for t in ca.passing_terms(feats):
            counts[t] = counts.get(t, 0) + 1
    terms = sorted(counts, key=lambda t: (-counts[t], t))[:cfg.max_radar]
    out = {}
    for t in terms:
        series = {}
        for mdl, feats in salience.items():
            cell = {f.class_label: f.beta for f in feats if f.term == t and f.passes}
            if cell:
                series[mdl] = [cell.get(a) for a in RADAR_AXES]
        out[t] = series
    return out


def stage_report(cfg: RunConfig, layout: Layout, radar_csv: str | Path | None = None) -> list[Path]:
    verdicts = _verdicts(layout)
    rows = [{"model": r["model"], "dimension": r["dimension"], "classifier": r["classifier"],
             "margin": float(r["margin_pct"]), "margin_text": r["margin_pct"], "significant": r["significant"]}
            for r in verdicts]
    out = []
    bars = layout.chart("margin_bars")
    charts.write_chart(charts.margin_bars_spec(rows, "accuracy minus chance"), bars)
    out += [bars, bars.with_suffix(".csv")]
    radar = read_radar_csv(radar_csv) if radar_csv else _pipeline_radar(cfg, layout)
    for term, series in radar.items():
        chart = layout.chart(f"radar_{safe_name(term)}")
        charts.write_chart(charts.radar_spec(term, RADAR_AXES, series, f"{term}: log-odds vs Undergraduate"), chart)
        out += [chart, chart.with_suffix(".csv")]
    index = layout.path("index.html")
    index.write_text(render_index(layout, verdicts), encoding="utf-8")
    out.append(index)
    write_manifest(layout, cfg, "report", out, radar_source="table" if radar_csv else "pipeline")
    return out


def render_index(layout: Layout, verdicts: Sequence[dict]) -> str:
    """Single HTML page with every chart inlined and relative links to tables."""
    parts = ["<!DOCTYPE html>", '<html lang="en"><head><meta charset="utf-8">',
             "<title>refaudit report</title>",
             "<style>body{font-family:sans-serif;margin:2em;max-width:1100px}"
             "table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:2px 6px;font-size:12px}"
             "figure{margin:1.5em 0}</style></head><body>", "<h1>Reference-response fairness audit</h1>"]
    parts.append("<h2>Phase I verdicts</h2><table><tr>" + "".join(
        f"<th>{h}</th>" for h in ("model", "dimension", "classifier", "accuracy %", "95% CI", "margin", "p",
                                  "significant")) + "</tr>")
    for r in verdicts:
        parts.append("<tr>" + "".join(f"<td>{escape(str(c))}</td>" for c in (
            r["model"], r["dimension"], r["classifier"], r["mean_pct"], f"[{r['ci_lo_pct']}, {r['ci_hi_pct']}]",
            r["margin_pct"], f"{float(r['p_value']):.3g}", "yes" if r["significant"] == "1" else "no")) + "</tr>")
    parts.append("</table>")
    tables = sorted(p for p in layout.root.rglob("*.csv") if p.parent.name != "charts")
    if tables:
        parts.append("<h2>Tables</h2><ul>")
        parts += [f'<li><a href="{escape(p.relative_to(layout.root).as_posix())}">'
                  f"{escape(p.relative_to(layout.root).as_posix())}</a></li>" for p in tables]
        parts.append("</ul>")
    parts.append("<h2>Charts</h2>")
    for svg in sorted((layout.root / "charts").glob("*.svg")):
        rel = svg.relative_to(layout.root).as_posix()
        parts.append(f'<figure id="{escape(svg.stem)}">{svg.read_text(encoding="utf-8")}'
                     f'<figcaption>{escape(svg.stem)} (<a href="{escape(rel)}">svg</a>, '
                     f'<a href="{escape(svg.with_suffix(".csv").relative_to(layout.root).as_posix())}">data</a>)'
                     "</figcaption></figure>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refaudit", description="Fairness audit of chat-model reference responses.")
    p.add_argument("--version", action="version", version=f"refaudit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir in the config)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    for name, text in (("synthesize", "sample patrons and write query batches"),
                       ("generate", "send queries to every configured model"),
                       ("audit", "Phase I leakage tests"),
                       ("explain", "Phase II salient terms for flagged dimensions"),
                       ("consensus", "cross-model consensus, clustering and aggregation"),
                       ("report", "charts and the HTML index"),
                       ("all", "run every stage in order")):
        sp = sub.add_parser(name, parents=[common], help=text)
        if name in ("explain", "all"):
            sp.add_argument("--always", action="store_true", help="explain every dimension, flagged or not")
        if name in ("report", "all"):
            sp.add_argument("--radar-csv", help="draw radar charts from this coefficient table instead")
    return p


def run(args: argparse.Namespace) -> None:
    cfg = RunConfig.load(args.config)
    layout = Layout(args.out or cfg.output_dir)
    layout.root.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    always = True if getattr(args, "always", False) else None
    radar_csv = getattr(args, "radar_csv", None)
    if cmd in ("synthesize", "all"):
        stage_synthesize(cfg, layout)
    if cmd in ("generate", "all"):
        stage_generate(cfg, layout)
    if cmd in ("audit", "all"):
        stage_audit(cfg, layout)
    if cmd in ("explain", "all"):
        stage_explain(cfg, layout, always)
    if cmd in ("consensus", "all"):
        stage_consensus(cfg, layout)
    if cmd in ("report", "all"):
        stage_report(cfg, layout, radar_csv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except AuditError as exc:
        print(f"refaudit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
