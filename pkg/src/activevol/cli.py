"""Staged command-line pipeline driven by one YAML run config.

Each stage writes its outputs plus ``manifests/<stage>.json`` (input and output
hashes, config hash, seed, versions) under the output directory. A stage whose
manifest matches its current inputs and config is skipped; a stage whose
manifest no longer matches is refused unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from filelock import FileLock, Timeout

from . import datamodel as dm
from .datamodel import Mode
from .evaluate import BenchmarkReport, FoldPlan, benchmark, config_hash, family_seed, make_plan
from .featurize import FeatureMatrix, build_matrix
from .infer import (STRATEGIES, AggregationParams, InferenceResults, aggregation_summary, kneedle_elbow,
                    mitigate, predict_network)
from .metrics import all_metrics
from .regress import FAMILIES, RandomForest, TrainedModel, derive_seed, train
from .select import selection_report
from .synth import BUNDLE_FILES, SynthConfig, file_sha256, load_bundle, oracle_report, write_bundle

log = logging.getLogger("activevol")

STAGES = ("synth", "ingest", "featurize", "select", "train", "evaluate", "infer", "aggregate", "report")
INPUT_KEYS = ("links", "zones", "lgas", "stations", "station_obs", "counts", "third_party")


class StageError(RuntimeError):
    pass


class StaleManifest(StageError):
    pass


# ------------------------------------------------------------------ run config


@dataclass
class RunConfig:
    seed: int
    mode: str = "walk"
    out_dir: str = "out"
    inputs: dict = field(default_factory=dict)     # INPUT_KEYS -> path, or {"bundle": dir}
    synth: dict | None = None                      # SynthConfig overrides; enables the synth stage
    feature_set: object = "final"
    imputation_window_days: int = 7
    families: list = field(default_factory=lambda: list(FAMILIES))
    hyperparameters: dict = field(default_factory=dict)
    test_fraction: float = 0.2
    k: int = 10
    select: dict = field(default_factory=lambda: {"n_folds": 5, "n_lambdas": 50, "gini_trees": 100})
    infer: dict = field(default_factory=lambda: {"family": "best", "n_days": 7, "dates": None, "elbow": None})
    strategy: str = "cap"
    base_beta: float | None = None
    aggregation: dict | None = None                # {"d": km, "gamma": factor}; default per mode
    threads: int = 1
    base_dir: str = "."                            # relative paths resolve against this

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("run config needs a seed")
        self.seed = int(self.seed)
        self.mode = Mode(self.mode).value
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown model families {unknown}")
        if len(set(self.families)) != len(self.families):
            raise ValueError("families must be unique")
        if not self.inputs and self.synth is None:
            raise ValueError("run config needs inputs or a synth section")
        self.infer = {"family": "best", "n_days": 7, "dates": None, "elbow": None, **(self.infer or {})}
        self.select = {"n_folds": 5, "n_lambdas": 50, "gini_trees": 100, **(self.select or {})}
        self.agg_params()

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        if "seed" not in d:
            raise ValueError("run config needs a seed")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys {sorted(unknown)}")
        d.setdefault("base_dir", str(base_dir))
        return cls(**d)

    @classmethod
    def from_yaml(cls, path):
        path = Path(path)
        return cls.from_dict(yaml.safe_load(path.read_text()) or {}, base_dir=path.resolve().parent)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out(self) -> Path:
        return self.path(self.out_dir)

    @property
    def bundle_dir(self) -> Path | None:
        if self.synth is not None:
            return self.out / "bundle"
        if "bundle" in self.inputs:
            return self.path(self.inputs["bundle"])
        return None

    def input_paths(self) -> dict:
        b = self.bundle_dir
        if b is not None:
            return {k: b / BUNDLE_FILES[k] for k in INPUT_KEYS}
        missing = [k for k in INPUT_KEYS if k not in self.inputs]
        if missing:
            raise ValueError(f"run config inputs lack {missing}")
        return {k: self.path(self.inputs[k]) for k in INPUT_KEYS}

    def validate_inputs(self):
        missing = [f"{k}={p}" for k, p in self.input_paths().items() if not p.exists()]
        if missing:
            raise StageError(f"input paths do not exist: {', '.join(missing)}")

    def agg_params(self) -> AggregationParams:
        if self.aggregation:
            return AggregationParams(float(self.aggregation["d"]), float(self.aggregation["gamma"]))
        return AggregationParams.for_mode(self.mode)

    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict({**(self.synth or {}), "seed": self.seed, "mode": self.mode})


def stage_config(cfg: RunConfig, stage) -> dict:
    """The config subset a stage depends on; its hash decides staleness."""
    base = {"seed": cfg.seed, "mode": cfg.mode}
    sel = {
        "synth": lambda: {"synth": cfg.synth_config().to_dict() if cfg.synth is not None else None},
        "ingest": lambda: {},
        "featurize": lambda: {"feature_set": cfg.feature_set, "window": cfg.imputation_window_days,
                              "n_days": cfg.infer["n_days"], "dates": cfg.infer["dates"]},
        "select": lambda: {"select": cfg.select},
        "train": lambda: {"families": cfg.families, "hyperparameters": cfg.hyperparameters,
                          "test_fraction": cfg.test_fraction, "k": cfg.k},
        "evaluate": lambda: {"families": cfg.families, "hyperparameters": cfg.hyperparameters},
        "infer": lambda: {"family": cfg.infer["family"], "elbow": cfg.infer["elbow"], "strategy": cfg.strategy,
                          "base_beta": cfg.base_beta},
        "aggregate": lambda: {"aggregation": dataclasses.asdict(cfg.agg_params())},
        "report": lambda: {},
    }[stage]()
    return {**base, **sel}


# -------------------------------------------------------------------- manifests


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("activevol", "numpy", "pandas", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


class Run:
    """Paths and manifest bookkeeping for one output directory."""

    def __init__(self, cfg: RunConfig, threads=None):
        self.cfg = cfg
        self.threads = int(threads or cfg.threads)
        self.out = cfg.out
        self.reports = self.out / "reports"
        self.models = self.out / "models"
        self.features = self.out / "features"
        self.manifests = self.out / "manifests"

    def rel(self, p) -> str:
        p = Path(p).resolve()
        try:
            return p.relative_to(self.out.resolve()).as_posix()
        except ValueError:
            return str(p)

    def manifest_path(self, stage) -> Path:
        return self.manifests / f"{stage}.json"

    def load_manifest(self, stage) -> dict:
        p = self.manifest_path(stage)
        if not p.exists():
            raise StageError(f"missing upstream manifest {p}: run `activevol {stage}` first")
        return json.loads(p.read_text())

    def outputs_of(self, stage) -> list[Path]:
        m = self.load_manifest(stage)
        return [self.resolve(r) for r in m["outputs"]]

    def resolve(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.out / p

    def hashes(self, paths) -> dict:
        return {self.rel(p): file_sha256(p) for p in sorted(set(map(Path, paths)), key=str)}

    def update_run_manifest(self):
        stages = {}
        for s in STAGES:
            p = self.manifest_path(s)
            if p.exists():
                stages[s] = {"manifest": self.rel(p), "sha256": file_sha256(p)}
        doc = {"seed": self.cfg.seed, "config_hash": config_hash(self.cfg.to_dict()), "stages": stages}
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def upstream(cfg: RunConfig, stage) -> tuple:
    deps = {
        "synth": (),
        "ingest": ("synth",) if cfg.synth is not None else (),
        "featurize": ("ingest",),
        "select": ("featurize",),
        "train": ("featurize",),
        "evaluate": ("train",),
        "infer": ("train", "evaluate") if cfg.infer["family"] == "best" else ("train",),
        "aggregate": ("infer",),
        "report": ("ingest", "select", "evaluate", "aggregate"),
    }
    return deps[stage]


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_frame(path, df):
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


# ---------------------------------------------------------------------- stages


def stage_inputs(run: Run, stage) -> list[Path]:
    cfg = run.cfg
    paths = []
    if stage in ("ingest", "featurize", "aggregate", "report"):
        paths += list(cfg.input_paths().values())
    for up in upstream(cfg, stage):
        paths += run.outputs_of(up)
    return paths


def do_synth(run: Run):
    cfg = run.cfg
    if cfg.synth is None:
        raise StageError("run config has no synth section")
    from .synth import generate_world
    world = generate_world(cfg.synth_config())
    write_bundle(world, cfg.bundle_dir)
    return [cfg.bundle_dir / f for f in BUNDLE_FILES.values()] + [cfg.bundle_dir / "manifest.json"]


def _load_inputs(cfg: RunConfig, reports=None):
    p = cfg.input_paths()
    reports = reports if reports is not None else {k: dm.IngestReport() for k in INPUT_KEYS}
    data = {
        "links": dm.load_links(p["links"], cfg.mode, report=reports["links"]),
        "zones": dm.load_zones(p["zones"], report=reports["zones"]),
        "lgas": dm.load_lgas(p["lgas"], report=reports["lgas"]),
        "stations": dm.load_stations(p["stations"], report=reports["stations"]),
        "station_obs": dm.load_station_observations(p["station_obs"], report=reports["station_obs"]),
        "counts": dm.load_counts(p["counts"], cfg.mode, require_integer=False, report=reports["counts"]),
        "third_party": dm.load_third_party(p["third_party"], cfg.mode),
    }
    return data, reports


def _paired(counts, third_party):
    tp = third_party.lookup()
    obs, base = [], []
    for c in counts:
        t = c.third_party_count
        if t is None:
            t = tp.get((c.link_id, int(np.datetime64(c.date, "D").astype("int64"))))
        if t is not None:
            obs.append(c.observed_count)
            base.append(t)
    return np.array(obs, dtype=float), np.array(base, dtype=float)


def do_ingest(run: Run):
    cfg = run.cfg
    cfg.validate_inputs()
    data, reports = _load_inputs(cfg)
    summary = {k: {"total": r.total, "accepted": r.accepted, "rejected": r.rejected[:50],
                   "n_rejected": len(r.rejected), "warnings": r.warnings} for k, r in reports.items()}
    summary["third_party"] = {"total": len(data["third_party"]), "accepted": len(data["third_party"])}
    obs, base = _paired(data["counts"], data["third_party"])
    cols = {"observed_count": [c.observed_count for c in data["counts"]],
            "third_party_count_all": data["third_party"].counts}
    if len(base):
        cols["third_party_count_paired"] = base
    stats = dm.describe_table(cols)
    # raw third-party counts taken directly as estimates of the official counts
    raw = all_metrics(obs, base) if len(obs) >= 2 else {"r2": math.nan, "mae": math.nan, "rmse": math.nan}
    raw_df = pd.DataFrame([{"mode": cfg.mode, "n_pairs": len(obs), **raw}])
    return [_write_json(run.reports / "ingest_report.json", summary),
            _write_frame(run.reports / "descriptive_stats.csv", stats),
            _write_frame(run.reports / "raw_assessment.csv", raw_df)]


def _inference_dates(cfg: RunConfig, third_party):
    if cfg.infer.get("dates"):
        return [np.datetime64(d, "D") for d in cfg.infer["dates"]]
    days = np.unique(third_party.dates)
    n = int(cfg.infer.get("n_days") or len(days))
    return list(days[-n:])


def do_featurize(run: Run):
    cfg = run.cfg
    data, _ = _load_inputs(cfg)
    common = dict(feature_set=cfg.feature_set, stations=data["stations"],
                  imputation_window_days=cfg.imputation_window_days)
    args = (data["links"], data["zones"], data["lgas"], data["station_obs"], data["third_party"], cfg.mode)
    train_m, train_rep = build_matrix(*args, counts=data["counts"], **common)
    inf_m, inf_rep = build_matrix(*args, dates=_inference_dates(cfg, data["third_party"]), **common)
    run.features.mkdir(parents=True, exist_ok=True)
    train_m.to_csv(run.features / "train.csv")
    inf_m.to_csv(run.features / "inference.csv")
    run.reports.mkdir(parents=True, exist_ok=True)
    (run.reports / "featurize_train.json").write_text(train_rep.to_json() + "\n")
    (run.reports / "featurize_inference.json").write_text(inf_rep.to_json() + "\n")
    return [run.features / "train.csv", run.features / "inference.csv",
            run.reports / "featurize_train.json", run.reports / "featurize_inference.json"]


def do_select(run: Run):
    cfg = run.cfg
    m = FeatureMatrix.from_csv(run.features / "train.csv")
    forest = None
    if cfg.select.get("gini_trees"):
        forest = RandomForest(seed=derive_seed(cfg.seed, 101), threads=run.threads,
                              n_trees=int(cfg.select["gini_trees"])).fit(m.X, m.target)
    rep = selection_report(m, forest=forest, seed=cfg.seed, n_folds=int(cfg.select["n_folds"]),
                           n_lambdas=int(cfg.select["n_lambdas"]))
    rep.write(run.reports / "selection.csv", run.reports / "selection.json")
    return [run.reports / "selection.csv", run.reports / "selection.json"]


def _train_rows(m: FeatureMatrix, plan: FoldPlan):
    return np.flatnonzero(np.isin(m.site_ids, np.array(plan.train_sites, dtype=object)))


def do_train(run: Run):
    cfg = run.cfg
    m = FeatureMatrix.from_csv(run.features / "train.csv")
    plan = make_plan(m, cfg.test_fraction, cfg.k, cfg.seed)
    run.models.mkdir(parents=True, exist_ok=True)
    plan.to_json(run.models / "plan.json")
    tm = m.take(_train_rows(m, plan))
    outputs = [run.models / "plan.json"]
    status = {}
    for fam in cfg.families:
        try:
            model = train(fam, tm, cfg.hyperparameters.get(fam, {}), family_seed(cfg.seed, cfg.families, fam),
                          run.threads)
        except Exception as exc:  # noqa: BLE001 - one failing family does not stop the others
            log.warning("train: %s failed: %s", fam, exc)
            status[fam] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            continue
        model.save(run.models / f"{fam}.npz")
        outputs.append(run.models / f"{fam}.npz")
        status[fam] = {"status": "ok", "training_metrics": model.training_metrics}
    outputs.append(_write_json(run.models / "train_summary.json", status))
    return outputs


def _load_models(run: Run) -> dict:
    out = {}
    for fam in run.cfg.families:
        p = run.models / f"{fam}.npz"
        if p.exists():
            out[fam] = TrainedModel.load(p)
    return out


def do_evaluate(run: Run):
    cfg = run.cfg
    m = FeatureMatrix.from_csv(run.features / "train.csv")
    plan = FoldPlan.from_json(run.models / "plan.json")
    rep = benchmark(cfg.families, plan, m, configs=cfg.hyperparameters, seed=cfg.seed, threads=run.threads,
                    prefit=_load_models(run))
    return list(rep.write(run.reports, "benchmark").values())


def _best_family(run: Run) -> str:
    table = pd.read_csv(run.reports / "benchmark_table.csv")
    ok = table[(table["status"] == "ok") & table["testing_r2"].notna()]
    if ok.empty:
        raise StageError("no family has a held-out test score")
    ok = ok.sort_values(["testing_r2", "family"], ascending=[False, True], kind="stable")
    return str(ok["family"].iloc[0])


def _naive_beta(run: Run):
    p = run.models / "naive_base.npz"
    if not p.exists():
        return None
    return TrainedModel.load(p).estimator.coefficient_.beta


def do_infer(run: Run):
    cfg = run.cfg
    family = cfg.infer["family"]
    if family == "best":
        family = _best_family(run)
    path = run.models / f"{family}.npz"
    if not path.exists():
        raise StageError(f"no trained model {path}")
    model = TrainedModel.load(path)
    m = FeatureMatrix.from_csv(run.features / "inference.csv")
    res = predict_network(model, m)
    ratio = res.ratio
    ratio = ratio[np.isfinite(ratio)]
    knee = None
    elbow = cfg.infer.get("elbow")
    if elbow is None:
        knee = kneedle_elbow(ratio)
        elbow = None if knee is None else knee.value
    beta = cfg.base_beta if cfg.base_beta is not None else _naive_beta(run)
    if cfg.strategy == "fallback" and beta is None:
        raise StageError("fallback mitigation needs base_beta in the config or a trained naive_base model")
    if elbow is not None:
        res = mitigate(res, elbow, cfg.strategy, beta)
    else:
        log.warning("infer: ratio curve has no knee; estimates left unmitigated")
    links = dm.load_links(cfg.input_paths()["links"], cfg.mode)
    res.write_csv(run.reports / "inference.csv")
    res.write_geojson(run.reports / "inference_links.geojson", links)
    curve = pd.DataFrame({"rank": np.arange(len(ratio)), "ratio": np.sort(ratio)[::-1]})
    _write_frame(run.reports / "ratio_curve.csv", curve)
    source = "config" if cfg.infer.get("elbow") is not None else ("kneedle" if knee is not None else "none")
    info = {"family": family, "elbow": elbow, "elbow_source": source, "knee_rank": None if knee is None else knee.rank, "strategy": cfg.strategy,
            "base_beta": beta, "n_rows": len(res), "n_floored": res.n_floored,
            "flagged_rows": int(res.outlier.sum()), "flagged_link_fraction": res.flagged_link_fraction(),
            "accounting": res.accounting()}
    return [run.reports / "inference.csv", run.reports / "inference_links.geojson",
            run.reports / "ratio_curve.csv", _write_json(run.reports / "inference_summary.json", info)]


def do_aggregate(run: Run):
    cfg = run.cfg
    info = json.loads((run.reports / "inference_summary.json").read_text())
    res = InferenceResults.read_csv(run.reports / "inference.csv", elbow=info["elbow"], strategy=info["strategy"])
    links = dm.load_links(cfg.input_paths()["links"], cfg.mode)
    summary = aggregation_summary(res, links, cfg.agg_params())
    lga = pd.DataFrame([{"lga_id": k, "km_per_day": v["km"], "trips_per_day": v["trips"]}
                        for k, v in summary["by_lga_per_day"].items()])
    return [_write_json(run.reports / "aggregation.json", summary),
            _write_frame(run.reports / "aggregation_by_lga.csv", lga)]


def do_report(run: Run):
    cfg = run.cfg
    r = run.reports
    outputs = []
    table = pd.read_csv(r / "benchmark_table.csv")
    cols = ["family", "status"] + [f"{p}_{m}" for p in ("training", "testing") for m in ("r2", "mae", "rmse")]
    outputs.append(_write_frame(r / "report_performance.csv", table[cols]))
    cv_cols = ["family", "status"] + [c for c in table.columns if c.startswith("cv_")]
    outputs.append(_write_frame(r / "report_cross_validation.csv", table[cv_cols]))
    sel = pd.read_csv(r / "selection.csv")
    outputs.append(_write_frame(r / "report_selection.csv", sel))
    agg = json.loads((r / "aggregation.json").read_text())
    inf = json.loads((r / "inference_summary.json").read_text())
    prov = json.loads((r / "benchmark_provenance.json").read_text())
    summary = {"seed": cfg.seed, "mode": cfg.mode, "families": cfg.families,
               "best_family": inf["family"], "elbow": inf["elbow"], "strategy": inf["strategy"],
               "flagged_link_fraction": inf["flagged_link_fraction"], "leakage_free": prov["leakage_free"],
               "trips_per_day": agg["trips_per_day"], "km_per_day": agg["km_per_day"],
               "by_lga_per_day": agg["by_lga_per_day"],
               "raw_assessment": pd.read_csv(r / "raw_assessment.csv").to_dict("records")}
    outputs.append(_write_json(r / "report_summary.json", summary))
    if cfg.bundle_dir is not None and (cfg.bundle_dir / "manifest.json").exists():
        bundle = load_bundle(cfg.bundle_dir)
        res = InferenceResults.read_csv(r / "inference.csv", elbow=inf["elbow"], strategy=inf["strategy"])
        ok = table[table["status"] == "ok"]
        test_r2 = dict(zip(ok["family"], ok["testing_r2"].astype(float)))
        beta = _naive_beta(run)
        oracle = oracle_report(bundle, seed=cfg.seed, beta_hat=beta, results=res, params=cfg.agg_params(),
                               test_r2=test_r2)
        outputs.append(_write_json(r / "oracle_report.json", oracle))
    lines = [f"# activevol run (seed {cfg.seed}, mode {cfg.mode})", "",
             f"best family by held-out R2: {inf['family']}",
             f"elbow: {inf['elbow']} ({inf['strategy']}), links flagged: {inf['flagged_link_fraction']:.3f}",
             f"trips per day: {agg['trips_per_day']:.1f}", "", "| family | test R2 | test MAE | test RMSE |",
             "|---|---|---|---|"]
    for _, row in table.iterrows():
        lines.append(f"| {row['family']} | {row['testing_r2']:.4f} | {row['testing_mae']:.2f} | "
                     f"{row['testing_rmse']:.2f} |")
    (r / "report.md").write_text("\n".join(lines) + "\n")
    outputs.append(r / "report.md")
    return outputs


HANDLERS = {"synth": do_synth, "ingest": do_ingest, "featurize": do_featurize, "select": do_select,
            "train": do_train, "evaluate": do_evaluate, "infer": do_infer, "aggregate": do_aggregate,
            "report": do_report}


def run_stage(run: Run, stage, *, force=False) -> str:
    """Run one stage; returns ``"ran"`` or ``"skipped"``."""
    cfg = run.cfg
    for up in upstream(cfg, stage):
        run.load_manifest(up)
    inputs = stage_inputs(run, stage)
    missing = [str(p) for p in inputs if not Path(p).exists()]
    if missing:
        raise StageError(f"{stage}: missing inputs {missing[:5]}")
    in_hashes = run.hashes(inputs)
    chash = config_hash(stage_config(cfg, stage))
    mpath = run.manifest_path(stage)
    if mpath.exists():
        old = json.loads(mpath.read_text())
        reasons = []
        if old.get("config_hash") != chash:
            reasons.append("config changed")
        if old.get("inputs") != in_hashes:
            changed = sorted(k for k in set(old.get("inputs", {})) | set(in_hashes)
                             if old.get("inputs", {}).get(k) != in_hashes.get(k))
            reasons.append(f"inputs changed: {changed[:5]}")
        for rel, h in old.get("outputs", {}).items():
            p = run.resolve(rel)
            if not p.exists() or file_sha256(p) != h:
                reasons.append(f"output modified or missing: {rel}")
                break
        if not reasons:
            log.info("%s: up to date, skipped", stage)
            return "skipped"
        if not force:
            raise StaleManifest(f"{stage}: manifest {mpath} is stale ({'; '.join(reasons)}); rerun with --force")
    outputs = HANDLERS[stage](run)
    doc = {"stage": stage, "seed": cfg.seed, "config_hash": chash, "config": stage_config(cfg, stage),
           "inputs": in_hashes, "outputs": run.hashes(outputs), "versions": versions()}
    _write_json(mpath, doc)
    run.update_run_manifest()
    log.info("%s: done (%d outputs)", stage, len(outputs))
    return "ran"


def run_stages(cfg: RunConfig, stages, *, force=False, threads=None) -> dict:
    run = Run(cfg, threads)
    run.out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run.out / ".activevol.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise StageError(f"another run holds the lock on {run.out}") from None
    try:
        return {s: run_stage(run, s, force=force) for s in stages}
    finally:
        lock.release()


# -------------------------------------------------------------------------- cli


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activevol", description="Walking and cycling volume estimation pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", required=True, help="YAML run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--mode", choices=[m.value for m in Mode], help="override the config mode")
    common.add_argument("--strategy", choices=STRATEGIES, help="override the mitigation strategy")
    common.add_argument("--elbow", type=float, help="fixed elbow instead of Kneedle")
    common.add_argument("--threads", type=int, help="worker threads for learners")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--force", action="store_true", help="rerun stages whose manifests are stale")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for s in STAGES:
        sub.add_parser(s, parents=[common], help=f"run the {s} stage")
    sub.add_parser("run", parents=[common], help="run every stage in order")
    return p


def load_config(args) -> RunConfig:
    path = Path(args.config)
    raw = yaml.safe_load(path.read_text()) or {}
    for key in ("seed", "mode", "strategy", "threads"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.out is not None:
        raw["out_dir"] = str(Path(args.out).resolve())
    if args.elbow is not None:
        raw["infer"] = {**(raw.get("infer") or {}), "elbow": args.elbow}
    return RunConfig.from_dict(raw, base_dir=path.resolve().parent)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "run":
            stages = [s for s in STAGES if s != "synth" or cfg.synth is not None]
        else:
            stages = [args.command]
        result = run_stages(cfg, stages, force=args.force, threads=args.threads)
    except (StageError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"activevol: error: {exc}", file=sys.stderr)
        return 1
    for s, status in result.items():
        print(f"{s}: {status}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
