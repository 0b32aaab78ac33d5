"""Grid execution (images x methods x baselines), aggregation and report files."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from faithbench import attributions, baselines, featviz, metrics
from faithbench.data import load_idx, write_pgm
from faithbench.models import MLPModel, TrainConfig, load_model, train_sgd

log = logging.getLogger(__name__)

ROW_FIELDS = (
    "method",
    "baseline",
    "deletion_auc",
    "insertion_auc",
    "srg",
    "final_energy",
    "path_ood",
    "deletion_concentration",
    "insertion_concentration",
)
TRADEOFF_FIELDS = ("baseline", "final_energy", "path_ood")
CONCENTRATION_FIELDS = (
    "baseline",
    "deletion_concentration",
    "insertion_concentration",
    "deletion_ood_in_span",
    "insertion_ood_in_span",
)
LOWER_IS_BETTER = {"deletion": True, "insertion": False, "srg": False}


class BenchmarkError(RuntimeError):
    pass


@dataclass
class RunConfig:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    output_dir: str = "runs/desk"
    model: str | None = None
    hidden: list[int] = field(default_factory=lambda: [128])
    train: dict = field(default_factory=dict)
    methods: list[str] = field(default_factory=lambda: list(attributions.METHODS))
    baselines: list[str] = field(default_factory=lambda: list(baselines.KINDS))
    metric: dict = field(default_factory=dict)
    attribution: dict = field(default_factory=dict)
    featviz: dict = field(default_factory=dict)
    featviz_image: str | None = None
    image_count: int = 200
    seed: int = 0
    trace_images: int = 1
    dump_chains: bool = False

    def __post_init__(self):
        if not self.methods or not self.baselines:
            raise ValueError("method and baseline lists must be nonempty")
        if self.image_count < 1:
            raise ValueError("image_count must be >= 1")
        for m in self.methods:
            if m not in attributions.METHODS:
                raise ValueError(f"unknown method {m!r}")
        for b in self.baselines:
            if b not in baselines.KINDS:
                raise ValueError(f"unknown baseline {b!r}")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        required = {f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING}
        missing = required - set(doc)
        if missing:
            raise ValueError(f"missing config fields: {sorted(missing)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        cfg = cls.from_dict(json.loads(Path(path).read_text()))
        base = Path(path).parent
        # relative data/model paths resolve against the config file
        for name in ("train_images", "train_labels", "test_images", "test_labels", "model", "featviz_image"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute() and not Path(value).exists():
                candidate = base / value
                if candidate.exists():
                    setattr(cfg, name, str(candidate))
        return cfg

    def metric_config(self) -> metrics.MetricConfig:
        return metrics.MetricConfig(**self.metric)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReportRow:
    method: str
    baseline: str
    deletion_auc: float
    insertion_auc: float
    srg: float
    final_energy: float
    path_ood: float
    deletion_concentration: float
    insertion_concentration: float


@dataclass
class BenchmarkResult:
    records: list[dict]
    baseline_topk: dict[str, list[tuple[int, float]]]
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[ReportRow]:
        return aggregate(self.records)

    def to_json(self) -> dict:
        return {
            "meta": self.meta,
            "records": self.records,
            "baseline_topk": {k: [[c, p] for c, p in v] for k, v in self.baseline_topk.items()},
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "BenchmarkResult":
        topk = {k: [(int(c), float(p)) for c, p in v] for k, v in doc["baseline_topk"].items()}
        return cls(list(doc["records"]), topk, dict(doc.get("meta", {})))


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from integer parts (independent of execution order)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def kendall_tau(scores_a: Mapping[str, float], scores_b: Mapping[str, float]) -> float:
    """Kendall tau-a over shared items: (concordant - discordant) / C(n, 2); ties count 0."""
    if set(scores_a) != set(scores_b):
        raise ValueError("rankings cover different item sets")
    items = sorted(scores_a)
    n = len(items)
    if n < 2:
        return 1.0
    total = 0
    for i, j in itertools.combinations(items, 2):
        total += np.sign(scores_a[i] - scores_a[j]) * np.sign(scores_b[i] - scores_b[j])
    return float(total) / (n * (n - 1) / 2)


def rank_correlation(ranking_a: Sequence, ranking_b: Sequence) -> float:
    """Kendall tau between two orderings of the same items (first = best)."""
    if sorted(map(str, ranking_a)) != sorted(map(str, ranking_b)) or len(set(ranking_a)) != len(ranking_a):
        raise ValueError("rankings must order the same distinct items")
    pos_a = {item: -i for i, item in enumerate(ranking_a)}
    pos_b = {item: -i for i, item in enumerate(ranking_b)}
    return kendall_tau(pos_a, pos_b)


# ---------------------------------------------------------------------------
# running


def load_split(cfg: RunConfig):
    train_x = load_idx(cfg.train_images)
    train_y = load_idx(cfg.train_labels)
    test_x = load_idx(cfg.test_images)
    test_y = load_idx(cfg.test_labels)
    return train_x, train_y, test_x, test_y


def obtain_model(cfg: RunConfig, train_x, train_y) -> MLPModel:
    if cfg.model:
        model = load_model(cfg.model)
        if not isinstance(model, MLPModel):
            raise BenchmarkError("the benchmark needs an MLP classifier")
        return model
    d = int(np.prod(train_x.shape[1:]))
    sizes = [d, *cfg.hidden, int(train_y.max()) + 1]
    result = train_sgd(sizes, train_x, train_y, TrainConfig(**{"seed": cfg.seed, **cfg.train}))
    log.info("trained model: accuracy %.4f", result.accuracy)
    return result.model


def obtain_featviz_image(cfg: RunConfig, model: MLPModel, train_x) -> np.ndarray:
    if cfg.featviz_image:
        return featviz.load_baseline_image(cfg.featviz_image)
    r = featviz.mean_magnitude_spectrum(train_x)
    result = featviz.optimize_baseline(model, r, featviz.FeatVizConfig(**{"seed": cfg.seed, **cfg.featviz}))
    log.info(
        "featviz baseline: objective %.4g -> %.4g, clip fraction %.3f",
        result.trace[0], result.trace[-1], result.clip_fraction,
    )
    return result.image


def _record(image_id, method, kind, dele: metrics.MetricTrace, ins: metrics.MetricTrace) -> dict:
    d_auc, i_auc = dele.auc, ins.auc
    rec = {
        "image": image_id,
        "method": method,
        "baseline": kind,
        "deletion_auc": d_auc,
        "insertion_auc": i_auc,
        "srg": metrics.srg(i_auc, d_auc),
        "final_energy": float(dele.logit_energy[-1]),
        "path_ood": float(np.mean(dele.ood_normalized)),
    }
    if np.all(dele.scores >= 0) and np.all(ins.scores >= 0):
        dc = metrics.auc_concentration(dele).fraction
        ic = metrics.auc_concentration(ins).fraction
        rec.update(
            deletion_concentration=dc,
            insertion_concentration=ic,
            deletion_ood_in_span=metrics.mean_ood_within(dele, dc),
            insertion_ood_in_span=metrics.mean_ood_within(ins, ic),
        )
    else:
        rec.update(
            deletion_concentration=math.nan,
            insertion_concentration=math.nan,
            deletion_ood_in_span=math.nan,
            insertion_ood_in_span=math.nan,
        )
    return rec


def run_benchmark(
    cfg: RunConfig,
    model: MLPModel | None = None,
    featviz_image: np.ndarray | None = None,
    data=None,
    trace_dir: Path | None = None,
) -> BenchmarkResult:
    """Evaluate every (image, method, baseline) cell; deterministic given ``cfg.seed``.

    Explanations are computed once per (image, method); baseline contexts once
    per (image, baseline). ``model``, ``featviz_image`` and ``data`` may be
    passed in to skip loading.
    """
    train_x, train_y, test_x, _ = data if data is not None else load_split(cfg)
    if model is None:
        model = obtain_model(cfg, train_x, train_y)
    if "featviz" in cfg.baselines and featviz_image is None:
        featviz_image = obtain_featviz_image(cfg, model, train_x)
    mcfg = cfg.metric_config()
    stats = baselines.DatasetStats.from_images(train_x)
    index = metrics.build_feature_index(model, train_x)
    n = min(cfg.image_count, len(test_x))
    records: list[dict] = []

    for img_id in range(n):
        x = test_x[img_id]
        acfg = attributions.AttributionConfig(
            **{**cfg.attribution, "seed": derive_seed(cfg.seed, img_id, 1)}
        )
        explanations = {}
        for method in cfg.methods:
            try:
                explanations[method] = attributions.explain(method, model, x, acfg)
            except Exception as exc:
                raise BenchmarkError(f"image {img_id}, method {method}: {exc}") from exc
        target = attributions.target_class(model, x)
        for kind in cfg.baselines:
            try:
                ctx = baselines.build_context(
                    kind, x, stats, derive_seed(cfg.seed, img_id, 2), featviz_image=featviz_image
                )
            except Exception as exc:
                raise BenchmarkError(f"image {img_id}, baseline {kind}: {exc}") from exc
            for method in cfg.methods:
                try:
                    expl = explanations[method]
                    dele = metrics.deletion_trace(model, x, expl, ctx, mcfg, index, target)
                    ins = metrics.insertion_trace(model, x, expl, ctx, mcfg, index, target)
                except Exception as exc:
                    raise BenchmarkError(f"image {img_id}, method {method}, baseline {kind}: {exc}") from exc
                records.append(_record(img_id, method, kind, dele, ins))
                if trace_dir is not None and img_id < cfg.trace_images:
                    for tr in (dele, ins):
                        metrics.write_trace_csv(tr, trace_dir / f"img{img_id:04d}_{method}_{kind}_{tr.metric}.csv")
            if trace_dir is not None and cfg.dump_chains and img_id < cfg.trace_images:
                order = explanations[cfg.methods[0]].ordering
                counts = [round(f * x.size) for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
                for step, img in zip(counts, baselines.chain(x, order, ctx, counts)):
                    write_pgm(trace_dir / f"chain_img{img_id:04d}_{kind}_{step:04d}.pgm", img.reshape(x.shape))
        log.debug("image %d done", img_id)

    topk = {}
    for kind in cfg.baselines:
        ctx = baselines.build_context(
            kind, test_x[0], stats, derive_seed(cfg.seed, 0, 2), featviz_image=featviz_image
        )
        topk[kind] = metrics.classify_topk(model, ctx.replacement, min(5, model.classes))
    meta = {"images": n, "classes": model.classes, "config": cfg.to_dict()}
    return BenchmarkResult(records, topk, meta)


# ---------------------------------------------------------------------------
# aggregation and report


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def aggregate(records: Sequence[Mapping]) -> list[ReportRow]:
    """Mean per (method, baseline), in first-seen order."""
    groups: dict[tuple[str, str], list[Mapping]] = {}
    for rec in records:
        groups.setdefault((rec["method"], rec["baseline"]), []).append(rec)
    rows = []
    for (method, kind), recs in groups.items():
        rows.append(
            ReportRow(
                method=method,
                baseline=kind,
                **{f: _mean([r[f] for r in recs]) for f in ROW_FIELDS[2:]},
            )
        )
    return rows


def method_scores(rows: Sequence[ReportRow], metric: str) -> dict[str, dict[str, float]]:
    """Per baseline: method -> score oriented so that higher means better-ranked."""
    attr = {"deletion": "deletion_auc", "insertion": "insertion_auc", "srg": "srg"}[metric]
    sign = -1.0 if LOWER_IS_BETTER[metric] else 1.0
    out: dict[str, dict[str, float]] = {}
    for row in rows:
        out.setdefault(row.baseline, {})[row.method] = sign * getattr(row, attr)
    return out


def tau_matrix(rows: Sequence[ReportRow], metric: str) -> tuple[list[str], np.ndarray]:
    scores = method_scores(rows, metric)
    names = list(scores)
    mat = np.eye(len(names))
    for i, j in itertools.combinations(range(len(names)), 2):
        mat[i, j] = mat[j, i] = kendall_tau(scores[names[i]], scores[names[j]])
    return names, mat


def min_off_diagonal(mat: np.ndarray) -> float:
    n = len(mat)
    if n < 2:
        return math.nan
    return float(np.min(mat[~np.eye(n, dtype=bool)]))


def tradeoff(records: Sequence[Mapping]) -> dict[str, tuple[float, float]]:
    """Per baseline: (mean final logit energy, mean path OOD)."""
    by: dict[str, list[Mapping]] = {}
    for r in records:
        by.setdefault(r["baseline"], []).append(r)
    return {k: (_mean([r["final_energy"] for r in v]), _mean([r["path_ood"] for r in v])) for k, v in by.items()}


def pareto_frontier(points: Mapping[str, tuple[float, float]]) -> set[str]:
    """Names not strictly dominated (lower is better on both axes)."""
    front = set()
    for name, (e, o) in points.items():
        dominated = any(
            (e2 <= e and o2 <= o) and (e2 < e or o2 < o) for n2, (e2, o2) in points.items() if n2 != name
        )
        if not dominated:
            front.add(name)
    return front


def concentration(records: Sequence[Mapping]) -> dict[str, dict[str, float]]:
    by: dict[str, list[Mapping]] = {}
    for r in records:
        by.setdefault(r["baseline"], []).append(r)
    by["ALL"] = list(records)
    return {k: {f: _mean([r[f] for r in v]) for f in CONCENTRATION_FIELDS[1:]} for k, v in by.items()}


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_report(result: BenchmarkResult | Sequence[ReportRow], outdir) -> list[Path]:
    """Write the CSV report set; accepts a full result or bare rows (rankings and tau only)."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BenchmarkError(f"cannot create output directory {outdir}: {exc}") from exc
    if isinstance(result, BenchmarkResult):
        rows, records, topk = result.rows(), result.records, result.baseline_topk
    else:
        rows, records, topk = list(result), None, None
    if not rows:
        raise BenchmarkError("no report rows")
    written = []
    path = outdir / "rankings.csv"
    _write_csv(path, ROW_FIELDS, [[getattr(r, f) for f in ROW_FIELDS] for r in rows])
    written.append(path)
    for metric in ("deletion", "insertion", "srg"):
        names, mat = tau_matrix(rows, metric)
        path = outdir / f"tau_matrix_{metric}.csv"
        _write_csv(path, ["baseline", *names], [[n, *mat[i]] for i, n in enumerate(names)])
        written.append(path)
    if records is not None:
        path = outdir / "tradeoff.csv"
        pts = tradeoff(records)
        front = pareto_frontier(pts)
        _write_csv(
            path, [*TRADEOFF_FIELDS, "pareto"], [[k, e, o, int(k in front)] for k, (e, o) in pts.items()]
        )
        written.append(path)
        path = outdir / "concentration.csv"
        conc = concentration(records)
        _write_csv(path, CONCENTRATION_FIELDS, [[k, *v.values()] for k, v in conc.items()])
        written.append(path)
    if topk is not None:
        path = outdir / "baseline_topk.csv"
        out_rows = []
        for kind, preds in topk.items():
            for rank, (cls, p) in enumerate(preds, start=1):
                out_rows.append([kind, rank, cls, p])
        _write_csv(path, ["baseline", "rank", "class", "softmax"], out_rows)
        written.append(path)
    return written


def save_result(result: BenchmarkResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_json(), indent=1, sort_keys=True))


def load_result(path) -> BenchmarkResult:
    return BenchmarkResult.from_json(json.loads(Path(path).read_text()))
