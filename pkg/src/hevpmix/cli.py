"""Command-line front end: ``hevpmix simulate | fit | predict | evaluate``."""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from importlib import metadata
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import io
from .errors import ConfigError, DataError, DomainError, NumericalError
from .gp import ConstantPriors, GpHyperPriors
from .mcmc import ChainConfig, Sampler
from .predict import (CHI_LEVELS, SCORE_LEVELS, PREDICT_LEVELS, cross_validate, empirical_chi_pairs,
                      models_pairs, model_chi, mmse_chi, mmse_quantiles, predict_quantiles)
from .simulate import SimConfig, simulate, true_chi, true_quantiles

logger = logging.getLogger("hevpmix")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
MODEL_KINDS = ("hevp", "sb", "mm")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    projection: Literal["none", "lonlat"] = "none"
    knots: str | None = None  # optional x,y table; defaults to the data sites


class ModelSection(_Section):
    kinds: list[Literal["hevp", "sb", "mm"]] = Field(default_factory=lambda: ["mm"])
    gev_mode: Literal["constant", "gp"] = "constant"
    smoothness: float = Field(0.5, gt=0)
    J: int | None = Field(None, ge=1)


class PriorsSection(_Section):
    mu_sd: float = Field(10.0, gt=0)
    log_sigma_sd: float = Field(1.0, gt=0)
    xi_sd: float = Field(0.25, gt=0)
    tau_shape: float = Field(0.1, gt=0)
    tau_scale: float = Field(0.1, gt=0)
    beta_sd: float = Field(10.0, gt=0)
    var_shape: float = Field(2.0, gt=0)
    var_scale: float = Field(1.0, gt=0)
    range_scale: float | None = Field(None, gt=0)


class McmcSection(_Section):
    iterations: int = Field(10000, ge=1)
    burnin: int = Field(2500, ge=0)
    thin: int = Field(5, ge=1)
    adapt_window: int = Field(50, ge=1)
    target_accept: float = Field(0.4, gt=0, lt=1)
    stick_concentration: float = Field(1.0, gt=0)
    checkpoint_every: int = Field(0, ge=0)


def _levels(v):
    v = list(v)
    if not v or any(not 0 < x < 1 for x in v) or any(b <= a for a, b in zip(v, v[1:])):
        raise ValueError("levels must be strictly increasing values in (0, 1)")
    return v


class PredictionSection(_Section):
    levels: list[float] = Field(default_factory=lambda: list(PREDICT_LEVELS))
    max_draws: int | None = Field(None, ge=1)

    _check = field_validator("levels")(_levels)


class EvaluationSection(_Section):
    mode: Literal["cv", "truth"] = "cv"
    k: int = Field(3, ge=2)
    models: list[Literal["hevp", "sb", "mm", "truth"]] | None = None
    levels: list[float] = Field(default_factory=lambda: list(SCORE_LEVELS))
    chi_levels: list[float] = Field(default_factory=lambda: list(CHI_LEVELS))
    max_draws: int | None = Field(200, ge=1)

    _check = field_validator("levels", "chi_levels")(_levels)


class ConfigFile(_Section):
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    priors: PriorsSection = Field(default_factory=PriorsSection)
    mcmc: McmcSection = Field(default_factory=McmcSection)
    prediction: PredictionSection = Field(default_factory=PredictionSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    simulation: SimConfig = Field(default_factory=SimConfig)

    def chain(self, kind: str, seed: int) -> ChainConfig:
        m = self.mcmc
        try:
            return ChainConfig(model=kind, iterations=m.iterations, burnin=m.burnin, thin=m.thin,
                               seed=seed, adapt_window=m.adapt_window, target_accept=m.target_accept,
                               J=self.model.J, stick_concentration=m.stick_concentration,
                               gev_mode=self.model.gev_mode, smoothness=self.model.smoothness)
        except ValidationError as exc:
            raise ConfigError(_format_validation(exc, "mcmc")) from None

    def constant_priors(self) -> ConstantPriors:
        p = self.priors
        return ConstantPriors(p.mu_sd, p.log_sigma_sd, p.xi_sd, p.tau_shape, p.tau_scale)

    def gp_priors(self) -> GpHyperPriors:
        p = self.priors
        return GpHyperPriors(p.beta_sd, p.var_shape, p.var_scale, p.range_scale, self.model.smoothness)


def _format_validation(exc: ValidationError, prefix: str = "") -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in ((prefix,) if prefix else ()) + tuple(err["loc"]))
        parts.append(f"{loc}: {err['msg']}")
    return "invalid configuration: " + "; ".join(parts)


def load_config(path: str | None, overrides: list[str] | None = None) -> ConfigFile:
    """Parse a YAML config; ``overrides`` are ``section.key=value`` strings."""
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        section, field = key.split(".", 1)
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        raw[section][field] = yaml.safe_load(value)
    try:
        return ConfigFile.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _manifest(command: str, cfg: ConfigFile, seed, inputs: dict, outputs: list[Path]) -> dict:
    return {
        "command": command,
        "version": _version(),
        "seed": seed,
        "config": cfg.model_dump(mode="json"),
        "inputs": {k: {"path": str(v), "sha256": io.file_digest(v)} for k, v in sorted(inputs.items())},
        "outputs": {p.name: io.file_digest(p) for p in outputs},
    }


def _finish(out: Path, command: str, cfg: ConfigFile, seed, inputs: dict, outputs: list[Path]):
    io.write_manifest(out / "manifest.json", _manifest(command, cfg, seed, inputs, outputs))
    # wall-clock data lives outside the manifest so reruns stay byte-identical
    with open(out / "run.log", "a") as fh:
        fh.write(f"{_dt.datetime.now(_dt.timezone.utc).isoformat()} {command} seed={seed}\n")


def _load_data(cfg: ConfigFile, path):
    y, sites, ids, times = io.read_dataset(path)
    if cfg.data.projection == "lonlat":
        sites = io.project_lonlat(sites)
    knots = None
    if cfg.data.knots is not None:
        knots = io.read_sites(cfg.data.knots)
        if cfg.data.projection == "lonlat":
            knots = io.project_lonlat(knots)
    return y, sites, knots, ids, times


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    sim = cfg.simulation.model_copy(update={"seed": args.seed})
    try:
        sim = SimConfig.model_validate(sim.model_dump())
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc, "simulation")) from None
    ds = simulate(sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "data.csv"
    io.write_dataset(data_path, ds.y, ds.sites)
    cfg = cfg.model_copy(update={"simulation": sim})
    _finish(out, "simulate", cfg, args.seed, {}, [data_path])
    print(f"wrote {data_path} ({ds.T} replicates x {ds.n} sites)")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config, args.set)
    y, sites, knots, _, _ = _load_data(cfg, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for kind in cfg.model.kinds:
        ckpt = out / f"{kind}.ckpt"
        if args.resume and ckpt.exists():
            sampler = Sampler.load(ckpt)
            if sampler.kind != kind or not np.array_equal(sampler.y, y):
                raise ConfigError(f"checkpoint {ckpt} does not match the data or model")
            logger.info("resuming %s at iteration %d", kind, sampler.iteration)
        else:
            sampler = Sampler(cfg.chain(kind, args.seed), y, sites, knots,
                              priors=cfg.constant_priors(), gp_priors=cfg.gp_priors())
        sampler.run(until=args.stop_after, checkpoint=ckpt, checkpoint_every=cfg.mcmc.checkpoint_every)
        if sampler.iteration < sampler.cfg.iterations:
            print(f"{kind}: stopped at iteration {sampler.iteration}; rerun with --resume to continue")
            continue
        samples = sampler.samples()
        sp = out / f"{kind}_samples.csv"
        io.write_samples(sp, samples)
        acc = out / f"{kind}_acceptance.csv"
        io.write_rows(acc, ["block", "rate"], sorted(samples.acceptance.items()))
        outputs += [sp, io.sidecar(sp), acc]
        line = f"{kind}: {len(samples)} stored draws"
        if kind == "mm":
            line += f", P(delta=1) = {np.mean(samples.delta):.3f}"
        print(line)
    _finish(out, "fit", cfg, args.seed, {"data": Path(args.data)}, outputs)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_config(args.config, args.set)
    samples = io.read_samples(args.samples)
    if args.model is not None and args.model != samples.kind:
        raise ConfigError(f"samples were fitted with model {samples.kind!r}, not {args.model!r}")
    sites = io.read_sites(args.sites)
    if cfg.data.projection == "lonlat":
        sites = io.project_lonlat(sites)
    levels = cfg.prediction.levels if args.levels is None else _parse_levels(args.levels)
    grid = predict_quantiles(samples, sites, levels, seed=args.seed, max_draws=cfg.prediction.max_draws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "quantiles.csv"
    io.write_rows(path, ["x", "y", "level", "mean", "sd"], grid.rows())
    _finish(out, "predict", cfg, args.seed, {"samples": Path(args.samples), "sites": Path(args.sites)}, [path])
    print(f"wrote {path}")
    return EXIT_OK


def _parse_levels(text: str):
    try:
        return _levels(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--levels: {exc}") from None


def _truth_scores(cfg: ConfigFile, seed: int, y, sites, kinds):
    """Score in-sample predictions against the generating process."""
    sim = cfg.simulation.model_copy(update={"seed": seed})
    ds = simulate(sim)
    if ds.y.shape != y.shape or not np.allclose(ds.y, y, rtol=0, atol=1e-12):
        raise DataError("data file does not match the configured simulation and seed")
    ev = cfg.evaluation
    pairs = models_pairs(ds.n)
    true_q = true_quantiles(ds, ev.levels)
    true_c = np.column_stack([true_chi(ds, pairs, u) for u in ev.chi_levels])
    rows = []
    for kind in kinds:
        if kind == "truth":
            est_q, est_c = true_q, true_c
        else:
            samples = Sampler(cfg.chain(kind, seed), y, sites, priors=cfg.constant_priors(),
                              gp_priors=cfg.gp_priors()).run().samples()
            est_q = predict_quantiles(samples, sites, ev.levels, seed=seed, max_draws=ev.max_draws).mean
            est_c = np.column_stack([model_chi(samples, pairs, u, max_draws=ev.max_draws) for u in ev.chi_levels])
        sq = mmse_quantiles(est_q[None], true_q[None])
        sc = mmse_chi(est_c[None], true_c[None], ds.n)
        rows += [(kind, "quantile", float(lv), float(v)) for lv, v in zip(ev.levels, sq)]
        rows += [(kind, "chi", float(u), float(v)) for u, v in zip(ev.chi_levels, sc)]
    return rows


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    y, sites, knots, _, _ = _load_data(cfg, args.data)
    ev = cfg.evaluation
    kinds = ev.models or cfg.model.kinds
    if ev.mode == "cv":
        if "truth" in kinds:
            raise ConfigError("evaluation.models may only include 'truth' in truth mode")
        table = cross_validate(y, sites, kinds, ev.k, cfg.chain(kinds[0], args.seed), ev.levels,
                               ev.chi_levels, seed=args.seed, max_draws=ev.max_draws, knots=knots)
        rows = list(table.rows())
    else:
        rows = _truth_scores(cfg, args.seed, y, sites, kinds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scores.csv"
    io.write_rows(path, ["model", "target", "level", "mmse"], rows)
    _finish(out, "evaluate", cfg, args.seed, {"data": Path(args.data)}, [path])
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hevpmix", description="Spatial extremes with HEVP, SB and MM models")
    p.add_argument("--threads", type=int, default=1, help="worker cap; the compiled kernels run serially, so results never depend on it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
        sp.add_argument("--seed", type=int, required=seed_required, default=0)
        sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="simulate a dataset")
    common(s, True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one or more models")
    common(f, True)
    f.add_argument("--data", required=True)
    f.add_argument("--resume", action="store_true", help="continue from checkpoints in --out")
    f.add_argument("--stop-after", type=int, default=None, help=argparse.SUPPRESS)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="posterior predictive quantiles at new sites")
    common(pr, False)
    pr.add_argument("--samples", required=True)
    pr.add_argument("--sites", required=True)
    pr.add_argument("--levels", help="comma-separated quantile levels")
    pr.add_argument("--model", choices=MODEL_KINDS)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="MMSE score tables")
    common(e, True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
