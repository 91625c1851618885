"""End-to-end runs driven by an ExperimentConfig, plus the benchmark harness.

A run owns its output directory. It writes the canonical config, per-stage
checkpoints and bound reports, and ``metrics.jsonl``: one JSON object per
line with the fields of ``METRIC_FIELDS`` in that order. Everything except
the timestamp and the ``*_s`` timing fields is a pure function of
(config, seed).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cascade import (BoundReport, CascadeModel, CascadeOptions, _grow, bound_terms, convergence_gap,
                      diagnose_term, train_first)
from .config import ComponentConfig, DataConfig, ExperimentConfig, format_config
from .data import export_samples, load_dataset, make_synthetic, save_dataset, split_labeled
from .dataset import Dataset
from .errors import BadParams, BoostError, EmptyLabeledSet
from .metamodels.config import TrainConfig
from .metamodels.specs import ClassMixSpec, GmmSpec, VaeSpec
from .multiplicative import (ChainConfig, DensityComponent, MultiplicativeEnsemble, MultiplicativeOptions,
                             _train_component, estimate_log_partition, mcmc_sample, normalized_log_likelihood,
                             reweighted_dataset, save_ensemble)
from .semisup import classification_report, classify, semisup_train
from .serialize import cascade_to_bytes

METRIC_FIELDS = ("seq", "timestamp", "mode", "event", "stage", "terms", "std_errs", "total", "total_std_err",
                 "train_s", "density_s", "sampling_s", "info")
TIMING_FIELDS = ("timestamp", "train_s", "density_s", "sampling_s")


class MetricsWriter:
    """Append-only metrics stream; each line is flushed as it is written."""

    def __init__(self, path: Path | None, mode: str):
        self.path = path
        self.mode = mode
        self.records: list[dict] = []
        self._last = -math.inf
        if path is not None:
            path.write_text("")

    def emit(self, event: str, stage: int | None = None, report: BoundReport | None = None,
             train_s=None, density_s=None, sampling_s=None, info: dict | None = None) -> dict:
        now = max(time.time(), self._last)
        self._last = now
        terms = None if report is None else report.values
        errs = None if report is None else [float(t.std_err) for t in report.terms]
        values = (len(self.records), now, self.mode, event, stage, terms, errs,
                  None if report is None else report.total, None if report is None else report.total_std_err,
                  train_s, density_s, sampling_s, info or {})
        rec = dict(zip(METRIC_FIELDS, values))
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a") as f:
                f.write(json.dumps(rec) + "\n")
        return rec


def strip_timings(records: list[dict]) -> list[dict]:
    # info may carry timing sub-fields too; names end with "_s"
    out = []
    for r in records:
        r = {k: v for k, v in r.items() if k not in TIMING_FIELDS}
        r["info"] = {k: v for k, v in r["info"].items() if not k.endswith("_s")}
        out.append(r)
    return out


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class RunResult:
    mode: str
    model: object
    reports: list[BoundReport]
    records: list[dict]
    summary: dict = field(default_factory=dict)
    out: Path | None = None


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _stage_context(stage: int, what: str, exc: BoostError) -> BoostError:
    try:
        return type(exc)(f"stage {stage} ({what}): {exc}")
    except TypeError:
        return exc


def load_data(data: DataConfig, seed: int) -> tuple[Dataset, Dataset | None, dict | None]:
    data_seed = seed if data.seed is None else data.seed
    if data.path is not None:
        ds = load_dataset(data.path)
        test = load_dataset(data.test_path) if data.test_path else None
        return ds, test, None
    ds, manifest = make_synthetic(data.synthetic, data.params, data.n, data_seed)
    test = None
    if data.test_n:
        test, _ = make_synthetic(data.synthetic, data.params, data.test_n, data_seed + 1)
    return ds, test, manifest


def _export(cfg: ExperimentConfig, samples, space, out: Path | None) -> None:
    if out is None:
        return
    export_samples(samples, out / "samples.csv", "csv", space)
    if cfg.data.image_width and cfg.data.image_height:
        export_samples(samples, out / "samples.pgm", "pgm", space, cfg.data.image_width, cfg.data.image_height)


def _rngs(seed: int):
    # training, evaluation and sampling draw from separate streams so that
    # training matches the library entry points for the same seed
    return (np.random.default_rng(seed), np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2]))


def _run_cascade(cfg, ds, test, writer, out):
    rng, eval_rng, sample_rng = _rngs(cfg.seed)
    opts = CascadeOptions(n_mc=cfg.n_mc, iw_samples=cfg.iw_samples)
    model, reports = None, []
    total_train = total_density = 0.0
    for k, spec in enumerate(cfg.recipe, start=1):
        try:
            with _Timer() as t_train:
                model = train_first(ds, spec, cfg.train, rng) if model is None else \
                    _grow(model, spec, ds, cfg.train, rng, opts)
            with _Timer() as t_dens:
                report = bound_terms(model, ds, cfg.n_mc, rng, cfg.iw_samples)
                info = {"family": spec.family}
                if k > 1:
                    info["verdict"] = diagnose_term(report.terms[-1]).verdict.value
                if test is not None:
                    info["test_total"] = bound_terms(model, test, cfg.n_mc, eval_rng, cfg.iw_samples).total
            with _Timer() as t_samp:
                model.sample(cfg.n_samples, sample_rng)
        except BoostError as exc:
            raise _stage_context(k, spec.family, exc) from exc
        reports.append(report)
        total_train += t_train.seconds
        total_density += t_dens.seconds
        if out is not None:
            (out / f"stage_{k}.gbcs").write_bytes(model.to_bytes())
            (out / f"bound_stage_{k}.txt").write_text(report.to_text())
        writer.emit("stage", k, report, t_train.seconds, t_dens.seconds, t_samp.seconds, info)
    gap = convergence_gap(model, ds, cfg.n_mc, eval_rng)
    with _Timer() as t_samp:
        samples = model.sample(cfg.n_samples, sample_rng)
    _export(cfg, samples, model.visible_space, out)
    summary = {"log_likelihood": reports[-1].total, "log_likelihood_std_err": reports[-1].total_std_err,
               "gap": gap.value, "gap_signed": gap.signed, "gap_std_err": gap.std_err, "n_stages": len(model)}
    writer.emit("summary", len(model), reports[-1], total_train, total_density, t_samp.seconds, summary)
    return model, reports, summary


def _run_semisup(cfg, ds, test, writer, out):
    if ds.labels is None:
        raise EmptyLabeledSet("semi-supervised mode needs a labeled dataset")
    rng, eval_rng, sample_rng = _rngs(cfg.seed)
    if not isinstance(cfg.recipe[-1], ClassMixSpec):
        raise BadParams("the last stage of a semi-supervised recipe must be family=classmix")
    n_classes = cfg.recipe[-1].n_classes
    data_seed = cfg.seed if cfg.data.seed is None else cfg.data.seed
    lds = split_labeled(ds, cfg.labels_per_class, n_classes, data_seed)
    opts = CascadeOptions(n_mc=cfg.n_mc, iw_samples=cfg.iw_samples)
    with _Timer() as t_train:
        model, reports = semisup_train(lds, cfg.recipe, cfg.train, rng, cfg.semisup, opts)
    for k, report in enumerate(reports, start=1):
        family = cfg.recipe[min(k, len(cfg.recipe)) - 1].family
        writer.emit("stage", k, report, None, None, None, {"family": family})
    with _Timer() as t_dens:
        if test is not None and test.labels is not None:
            xs, ys = test.points, test.labels
        else:
            # transductive: the rows whose labels were hidden during training
            hidden = np.ones(len(ds), dtype=bool)
            for x in lds.labeled:
                hidden &= ~np.all(ds.points == x, axis=1)
            xs, ys = ds.points[hidden], ds.labels[hidden]
        pred, _ = classify(model, xs, cfg.n_mc, eval_rng)
        acc = float(np.mean(pred == ys))
    with _Timer() as t_samp:
        samples = model.cascade.sample(cfg.n_samples, sample_rng)
    _export(cfg, samples, model.visible_space, out)
    if out is not None:
        (out / "semisup.gbcs").write_bytes(model.cascade.to_bytes())
        (out / "bound.txt").write_text(reports[-1].to_text())
        (out / "classification.txt").write_text(classification_report(pred, ys, n_classes))
    summary = {"accuracy": acc, "n_eval": int(ys.size), "alpha": model.alpha, "beta": model.beta,
               "log_likelihood": reports[-1].total, "log_likelihood_std_err": reports[-1].total_std_err}
    writer.emit("summary", len(reports), reports[-1], t_train.seconds, t_dens.seconds, t_samp.seconds, summary)
    return model, reports, summary


def _component_spec(comp: ComponentConfig):
    return list(comp.specs) if comp.is_cascade else comp.specs[0]


def _run_multiplicative(cfg, ds, test, writer, out):
    rng, eval_rng, sample_rng = _rngs(cfg.seed)
    opts = MultiplicativeOptions(n_partition=cfg.n_partition, n_mc=cfg.n_mc, iw_samples=cfg.iw_samples,
                                 cascade=CascadeOptions(n_mc=cfg.n_mc, iw_samples=cfg.iw_samples))
    comps: list[DensityComponent] = []
    total_train = total_density = 0.0
    for i, comp in enumerate(cfg.components, start=1):
        what = "+".join(s.family for s in comp.specs)
        try:
            with _Timer() as t_dens:
                train_ds = ds if i == 1 else reweighted_dataset(ds, MultiplicativeEnsemble(comps), comp.beta,
                                                                 cfg.n_mc, rng, cfg.iw_samples)
            with _Timer() as t_train:
                model = _train_component(_component_spec(comp), train_ds, cfg.train, rng, opts)
        except BoostError as exc:
            raise _stage_context(i, what, exc) from exc
        comps.append(DensityComponent(model, comp.alpha))
        total_train += t_train.seconds
        total_density += t_dens.seconds
        w = train_ds.effective_weights
        ess = float(w.sum() ** 2 / (w * w).sum())
        if out is not None:
            buf = model.to_bytes() if isinstance(model, CascadeModel) else cascade_to_bytes([model])
            (out / f"component_{i}.gbcs").write_bytes(buf)
        writer.emit("stage", i, None, t_train.seconds, t_dens.seconds, None,
                    {"component": what, "alpha": comp.alpha, "beta": comp.beta, "weight_ess": ess})
    ens = MultiplicativeEnsemble(comps)
    summary = {"n_components": len(comps), "exact": ens.is_exact}
    report = None
    with _Timer() as t_dens:
        if cfg.n_partition:
            try:
                ens.log_z = estimate_log_partition(ens, None, cfg.n_partition, rng, cfg.n_mc, cfg.iw_samples,
                                                   seed=cfg.seed)
            except BoostError as exc:
                raise _stage_context(len(comps), "partition estimate", exc) from exc
            ll = normalized_log_likelihood(ens, test if test is not None else ds, cfg.n_mc, eval_rng,
                                           cfg.iw_samples)
            report = BoundReport([ll], cfg.n_mc)
            summary.update(log_z=ens.log_z.value, log_z_std_err=ens.log_z.std_err, log_z_ess=ens.log_z.ess,
                           log_likelihood=float(ll.value), log_likelihood_std_err=float(ll.std_err))
    with _Timer() as t_samp:
        try:
            res = mcmc_sample(ens, cfg.n_samples, ChainConfig(cfg.burn_in, cfg.thinning), sample_rng, cfg.n_mc,
                              cfg.iw_samples)
        except BoostError as exc:
            raise _stage_context(len(comps), "mcmc", exc) from exc
    summary["acceptance_rate"] = res.acceptance_rate
    _export(cfg, res.samples, ens.visible_space, out)
    if out is not None:
        save_ensemble(ens, out / "ensemble")
    writer.emit("summary", len(comps), report, total_train, total_density + t_dens.seconds, t_samp.seconds,
                summary)
    return ens, [] if report is None else [report], summary


_RUNNERS = {"cascade": _run_cascade, "semisup": _run_semisup, "multiplicative": _run_multiplicative,
            "hybrid": _run_multiplicative}


def run_experiment(cfg: ExperimentConfig, out=None) -> RunResult:
    """Run ``cfg`` end to end; ``out`` (or ``cfg.out``) receives artifacts."""
    out = out if out is not None else cfg.out
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg))
    ds, test, manifest = load_data(cfg.data, cfg.seed)
    if out is not None and manifest is not None:
        save_dataset(ds, out / "train.gbds", manifest)
    writer = MetricsWriter(None if out is None else out / "metrics.jsonl", cfg.mode)
    model, reports, summary = _RUNNERS[cfg.mode](cfg, ds, test, writer, out)
    return RunResult(cfg.mode, model, reports, writer.records, summary, out)


# ---------------------------------------------------------------------------
# benchmark

BENCH_COLUMNS = ("mode", "layout", "log_likelihood", "log_likelihood_std_err", "train_s", "density_s",
                 "sampling_s")


def default_bench_config(seed: int = 0) -> ExperimentConfig:
    """Desk-scale stand-in: a 4-cluster mixture in 4-D, [VAE, GMM]."""
    train = TrainConfig(epochs=20, batch_size=50, learning_rate=0.01, optimizer="adam", seed=seed)
    recipe = (VaeSpec(latent_dim=2, hidden=(32,)), GmmSpec(n_components=8, init="cover"))
    data = DataConfig(synthetic="gaussian_mixture", n=1000, params={"k": "4", "d": "4"})
    return ExperimentConfig(mode="cascade", data=data, train=train, recipe=recipe, seed=seed, n_mc=1,
                            iw_samples=16, n_partition=10000, n_samples=1000, burn_in=1000)


BENCH_BETA = 0.5


def bench_configs(cfg: ExperimentConfig, beta: float = BENCH_BETA) -> dict[str, ExperimentConfig]:
    """Cascade, parallel and hybrid variants built from one recipe: the
    recipe itself, its first model in parallel with a copy, and the recipe
    in parallel with a copy. The copy is trained on data reweighted with
    ``beta``; beta = 1 makes the weights of Gaussian-tailed data collapse
    onto a handful of outliers."""
    if not cfg.recipe:
        raise BadParams("bench needs a recipe ([stage.i] sections)")
    first = (cfg.recipe[0],)
    whole = tuple(cfg.recipe)
    return {
        "cascade": replace(cfg, mode="cascade", components=()),
        "parallel": replace(cfg, mode="multiplicative",
                            components=(ComponentConfig(first), ComponentConfig(first, beta=beta))),
        "hybrid": replace(cfg, mode="hybrid",
                          components=(ComponentConfig(whole), ComponentConfig(whole, beta=beta))),
    }


def bench(cfg: ExperimentConfig | None = None, out=None, seed: int | None = None) -> dict:
    """Table-3-style comparison: log-likelihood plus train, density
    estimation and sampling seconds for each mode at equal sample counts."""
    cfg = default_bench_config(0 if seed is None else seed) if cfg is None else cfg
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out = None if out is None else Path(out)
    rows = []
    for mode, sub in bench_configs(cfg).items():
        res = run_experiment(sub, None if out is None else out / mode)
        final = res.records[-1]
        layout = " + ".join(s.family.upper() for s in sub.recipe) if mode == "cascade" else " || ".join(
            "(" + "+".join(s.family.upper() for s in c.specs) + ")" for c in sub.components)
        rows.append(dict(zip(BENCH_COLUMNS, (
            mode, layout, res.summary.get("log_likelihood"), res.summary.get("log_likelihood_std_err"),
            final["train_s"], final["density_s"], final["sampling_s"]))))
    by_mode = {r["mode"]: r for r in rows}
    ratio = by_mode["parallel"]["sampling_s"] / max(by_mode["cascade"]["sampling_s"], 1e-12)
    result = {"rows": rows, "sampling_speedup": ratio, "n_samples": cfg.n_samples}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(result, indent=1) + "\n")
    return result


def format_bench(result: dict) -> str:
    lines = ["\t".join(BENCH_COLUMNS)]
    for r in result["rows"]:
        lines.append("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in BENCH_COLUMNS))
    lines.append(f"sampling_speedup\t{result['sampling_speedup']!r}")
    return "\n".join(lines) + "\n"
