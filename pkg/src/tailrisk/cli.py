"""Config-driven command line pipeline.

Subcommands: fixture, measures, factors, fit, forecast, backtest, score,
mcs, pipeline. Each writes its artifacts plus a manifest (content hashes of
inputs, config echo, seed, version) into the output directory; `pipeline`
runs every stage in order and skips stages whose manifest still matches
the current inputs. Exit codes: 0 ok, 2 config error, 3 data error,
4 estimation failure, 5 evaluation degenerate.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GarchSpec, rolling_baseline_forecast
from .errors import (EXIT_CODES, ConfigError, DataError, EstimationError,
                     EvaluationDegenerateError, TailriskError)
from .estimate import FitConfig, ForecastSeries, RollingPolicy, fit, rolling_forecast
from .evaluate import backtest_report, mcs, score_models, write_report_json
from .factors import FactorSeries, ar1_smooth, extract_pc_factor, standardize_panel
from .ingest import AlignedDataset, align, load_daily_csv, load_intraday_csv
from .realized import MeasureConfig, MeasurePanel, build_panel
from .simulate import simulate_intraday_csv

ENV_CONFIG = "TAILRISK_CONFIG"
PROPOSED_ID = "FACTOR-ES-CAVIAR"
DEFAULT_ROSTER = (PROPOSED_ID, "P-GARCH-N", "P-GARCH-T", "H-GARCH-N", "EVT-GARCH")


@dataclass
class PipelineConfig:
    intraday: str = ""
    daily: str = ""
    out_dir: str = "out"
    split_date: str = ""
    oos_length: int = 0
    alphas: tuple = (0.05, 0.025, 0.01)
    x_column: str = "RV"
    n_factors: int = 1
    smooth_factor: bool = False
    tail_frac: float = 0.05
    window: str = "fixed"
    refit_every: int = 25
    n_starts: int = 12
    max_evals: int = 4000
    roster: tuple = DEFAULT_ROSTER
    losses: tuple = ("FZ0", "FZG", "AL")
    mcs_level: float = 0.90
    mcs_iters: int = 10000
    bootstrap: int = 2000
    seed: int = None
    plot: bool = False

    def validate(self):
        if self.seed is None:
            raise ConfigError("a seed is required (set [run] seed or --seed)")
        if not self.roster:
            raise ConfigError("model roster must not be empty")
        for a in self.alphas:
            if not 0.0 < a < 0.5:
                raise ConfigError(f"alpha {a} outside (0, 0.5)")
        if self.split_date and self.oos_length:
            raise ConfigError("give either split_date or oos_length, not both")
        if not self.split_date and not self.oos_length:
            raise ConfigError("one of split_date / oos_length is required")
        if not self.intraday and not self.daily:
            raise ConfigError("an intraday or daily data path is required")

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["alphas"] = list(self.alphas)
        d["roster"] = list(self.roster)
        d["losses"] = list(self.losses)
        return d


_SECTION_KEYS = {
    "data": {"intraday": str, "daily": str, "out_dir": str},
    "sample": {"split_date": str, "oos_length": int},
    "model": {"alphas": "floats", "x_column": str, "n_factors": int,
              "smooth_factor": "bool", "tail_frac": float, "window": str,
              "refit_every": int, "n_starts": int, "max_evals": int,
              "roster": "strs"},
    "evaluate": {"losses": "strs", "mcs_level": float, "mcs_iters": int,
                 "bootstrap": int},
    "run": {"seed": int, "plot": "bool"},
}


def _convert(raw: str, kind):
    if kind == "floats":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind == "strs":
        return tuple(v for v in raw.replace(",", " ").split())
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return kind(raw)


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    path = path or os.environ.get(ENV_CONFIG)
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} not found")
        ini = configparser.ConfigParser()
        ini.read(path)
        for section, keys in _SECTION_KEYS.items():
            if not ini.has_section(section):
                continue
            for key, kind in keys.items():
                if ini.has_option(section, key):
                    try:
                        setattr(cfg, key, _convert(ini.get(section, key), kind))
                    except ValueError as exc:
                        raise ConfigError(f"bad value for [{section}] {key}: {exc}")
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg


# ---------------------------------------------------------------------------
# manifests and caching

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, stage: str, cfg: PipelineConfig,
                    inputs: list, outputs: list):
    man = {
        "stage": stage,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
    }
    with open(out / f"manifest_{stage}.json", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)


def _stage_current(out: Path, stage: str, cfg: PipelineConfig, inputs: list) -> bool:
    """True when the stage's manifest matches today's inputs and config."""
    mpath = out / f"manifest_{stage}.json"
    if not mpath.exists():
        return False
    try:
        man = json.loads(mpath.read_text())
    except json.JSONDecodeError:
        return False
    if man.get("config") != cfg.echo() or man.get("version") != __version__:
        return False
    for p, digest in man.get("inputs", {}).items():
        if not Path(p).exists() or _sha256(Path(p)) != digest:
            return False
    for p, digest in man.get("outputs", {}).items():
        if not Path(p).exists() or _sha256(Path(p)) != digest:
            return False
    return True


def _require(out: Path, stage: str, *paths) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise DataError(f"missing artifact(s) {missing}; run the `{stage}` "
                        f"subcommand first")


# ---------------------------------------------------------------------------
# stages

def _load_returns(cfg: PipelineConfig, out: Path):
    if cfg.daily:
        return load_daily_csv(cfg.daily)
    closes_path = out / "daily_closes.csv"
    _require(out, "measures", closes_path)
    return load_daily_csv(closes_path)


def stage_measures(cfg: PipelineConfig, out: Path) -> list:
    inputs = []
    if cfg.intraday:
        inputs.append(cfg.intraday)
        days = load_intraday_csv(cfg.intraday)
        panel = build_panel(days, MeasureConfig(tail_frac=cfg.tail_frac))
        panel.write_csv(out / "measures.csv")
        # daily closes derived from the last intraday price of each day are
        # rebuilt here so the daily return series exists even without a
        # separate daily file
        closes = _intraday_closes(cfg.intraday)
        with open(out / "daily_closes.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date", "close"])
            for d, px in closes:
                wr.writerow([str(d), repr(px)])
        outputs = [out / "measures.csv", out / "daily_closes.csv"]
    else:
        raise DataError("measures stage needs an intraday CSV "
                        "(daily-only runs cannot build the measure panel)")
    if cfg.daily:
        inputs.append(cfg.daily)
    _write_manifest(out, "measures", cfg, inputs, outputs)
    return outputs


def _intraday_closes(path):
    last = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for rec in rd:
            if not rec or not rec[0].strip():
                continue
            ts = np.datetime64(rec[0].replace("Z", ""))
            day = ts.astype("datetime64[D]")
            if day not in last or ts >= last[day][0]:
                last[day] = (ts, float(rec[1]))
    return sorted((day, px) for day, (_, px) in last.items())


def _aligned(cfg: PipelineConfig, out: Path) -> AlignedDataset:
    _require(out, "measures", out / "measures.csv")
    panel = MeasurePanel.read_csv(out / "measures.csv")
    returns = _load_returns(cfg, out)
    if cfg.split_date:
        return align(returns, panel, split_date=cfg.split_date)
    return align(returns, panel, oos_length=cfg.oos_length)


def stage_factors(cfg: PipelineConfig, out: Path) -> list:
    ds = _aligned(cfg, out)
    table, stats = standardize_panel(ds.measures, insample_rows=ds.split)
    fs = extract_pc_factor(table, stats, ds.returns.dates, r=cfg.n_factors)
    if cfg.smooth_factor:
        fs = ar1_smooth(fs, insample_rows=ds.split)
    fs.write_csv(out / "factors.csv")
    fs.write_loadings_csv(out / "loadings.csv")
    stats.write_json(out / "standardization.json")
    outputs = [out / "factors.csv", out / "loadings.csv", out / "standardization.json"]
    _write_manifest(out, "factors", cfg, [out / "measures.csv"], outputs)
    return outputs


def _load_factors(out: Path) -> FactorSeries:
    _require(out, "factors", out / "factors.csv")
    with open(out / "factors.csv", newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        dates, rows = [], []
        for rec in rd:
            dates.append(np.datetime64(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    vals = np.array(rows)
    return FactorSeries(dates=np.array(dates), values=vals,
                        loadings=np.full((1, vals.shape[1]), np.nan),
                        explained=np.full(vals.shape[1], np.nan), columns=[])


def _dataset_with_factors(cfg: PipelineConfig, out: Path) -> AlignedDataset:
    return _aligned(cfg, out).with_factors(_load_factors(out))


def stage_fit(cfg: PipelineConfig, out: Path) -> list:
    ds = _dataset_with_factors(cfg, out)
    outputs = []
    for alpha in cfg.alphas:
        fc = FitConfig(n_starts=cfg.n_starts, max_evals=cfg.max_evals, seed=cfg.seed)
        fm = fit(ds, alpha, fc, x_column=cfg.x_column)
        tag = _alpha_tag(alpha)
        with open(out / f"fit_{tag}.json", "w") as fh:
            json.dump(fm.report(), fh, indent=2, sort_keys=True)
        fm.insample_path.dates = ds.returns.dates[:ds.split]
        fm.insample_path.write_csv(out / f"insample_path_{tag}.csv")
        outputs += [out / f"fit_{tag}.json", out / f"insample_path_{tag}.csv"]
    _write_manifest(out, "fit", cfg,
                    [out / "measures.csv", out / "factors.csv"], outputs)
    return outputs


def parse_model_id(model_id: str):
    """'P-GARCH-N' -> (route, GarchSpec); the proposed model id maps to None."""
    if model_id == PROPOSED_ID:
        return None
    parts = model_id.split("-")
    fam_map = {"GARCH": "garch11", "GJR": "gjr", "EGARCH": "egarch"}
    dist_map = {"N": "normal", "T": "student_t"}
    try:
        if parts[0] == "EVT":
            return "evt", GarchSpec(family=fam_map[parts[1]], dist="normal")
        route = {"P": "parametric", "H": "fhs"}[parts[0]]
        return route, GarchSpec(family=fam_map[parts[1]], dist=dist_map[parts[2]])
    except (KeyError, IndexError):
        raise ConfigError(f"cannot parse model id {model_id!r}")


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:g}".replace(".", "p")


def stage_forecast(cfg: PipelineConfig, out: Path) -> list:
    ds = _dataset_with_factors(cfg, out)
    outputs = []
    for alpha in cfg.alphas:
        tag = _alpha_tag(alpha)
        path = out / f"forecast_{tag}.csv"
        first = True
        for model_id in cfg.roster:
            parsed = parse_model_id(model_id)
            if parsed is None:
                fc = rolling_forecast(
                    ds, alpha,
                    FitConfig(n_starts=cfg.n_starts, max_evals=cfg.max_evals,
                              seed=cfg.seed),
                    RollingPolicy(window=cfg.window, refit_every=cfg.refit_every),
                    x_column=cfg.x_column)
            else:
                route, spec = parsed
                fc = rolling_baseline_forecast(ds.returns.values, ds.split, alpha,
                                               route, spec, refit_every=cfg.refit_every,
                                               window=cfg.window,
                                               dates=ds.returns.dates)
            fc.write_csv(path, append=not first)
            first = False
        outputs.append(path)
        if cfg.plot:
            outputs.append(_plot_series(cfg, out, ds, alpha))
    _write_manifest(out, "forecast", cfg,
                    [out / "measures.csv", out / "factors.csv"], outputs)
    return outputs


def _plot_series(cfg: PipelineConfig, out: Path, ds: AlignedDataset, alpha: float):
    """Long-format per-series file for external plotting tools."""
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    tag = _alpha_tag(alpha)
    fcs = _read_forecasts(out, alpha)
    path = plots / f"series_{tag}.csv"
    oos_dates = ds.returns.dates[ds.split:]
    oos_ret = ds.returns.values[ds.split:]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["series", "date", "value"])
        for d, v in zip(oos_dates, oos_ret):
            wr.writerow(["return", str(d), repr(float(v))])
        for mid, fc in fcs.items():
            for i in range(len(fc.var)):
                wr.writerow([f"{mid}:VaR", str(fc.dates[i]), repr(float(fc.var[i]))])
                wr.writerow([f"{mid}:ES", str(fc.dates[i]), repr(float(fc.es[i]))])
    return path


def _read_forecasts(out: Path, alpha: float) -> dict:
    tag = _alpha_tag(alpha)
    path = out / f"forecast_{tag}.csv"
    _require(out, "forecast", path)
    rows = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for rec in rd:
            if not rec or rec[0] == "date":
                continue
            rows.setdefault(rec[4], []).append((np.datetime64(rec[0]),
                                                float(rec[2]), float(rec[3])))
    out_map = {}
    for mid, recs in rows.items():
        dates = np.array([x[0] for x in recs])
        out_map[mid] = ForecastSeries(dates=dates, alpha=alpha,
                                      var=np.array([x[1] for x in recs]),
                                      es=np.array([x[2] for x in recs]),
                                      model_id=mid)
    return out_map


def stage_backtest(cfg: PipelineConfig, out: Path) -> list:
    ds = _aligned(cfg, out)
    outputs = []
    for alpha in cfg.alphas:
        tag = _alpha_tag(alpha)
        fcs = _read_forecasts(out, alpha)
        rep = backtest_report(ds.returns.values[ds.split:], fcs, alpha,
                              seed=cfg.seed, n_boot=cfg.bootstrap,
                              dates=ds.returns.dates[ds.split:])
        write_report_json(rep, out / f"backtest_{tag}.json")
        outputs.append(out / f"backtest_{tag}.json")
    _write_manifest(out, "backtest", cfg,
                    [out / f"forecast_{_alpha_tag(a)}.csv" for a in cfg.alphas], outputs)
    return outputs


def stage_score(cfg: PipelineConfig, out: Path) -> list:
    ds = _aligned(cfg, out)
    outputs = []
    for alpha in cfg.alphas:
        tag = _alpha_tag(alpha)
        fcs = _read_forecasts(out, alpha)
        for loss in cfg.losses:
            lm = score_models(fcs, ds.returns.values[ds.split:], alpha, loss,
                              dates=ds.returns.dates[ds.split:])
            path = out / f"scores_{tag}_{loss}.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["date"] + lm.model_ids)
                for i in range(len(lm)):
                    wr.writerow([str(lm.dates[i])] + [repr(float(v)) for v in lm.losses[i]])
            outputs.append(path)
    _write_manifest(out, "score", cfg,
                    [out / f"forecast_{_alpha_tag(a)}.csv" for a in cfg.alphas], outputs)
    return outputs


def stage_mcs(cfg: PipelineConfig, out: Path) -> list:
    ds = _aligned(cfg, out)
    outputs = []
    for alpha in cfg.alphas:
        tag = _alpha_tag(alpha)
        fcs = _read_forecasts(out, alpha)
        for loss in cfg.losses:
            lm = score_models(fcs, ds.returns.values[ds.split:], alpha, loss,
                              dates=ds.returns.dates[ds.split:])
            res = mcs(lm, level=cfg.mcs_level, n_boot=cfg.mcs_iters, seed=cfg.seed)
            path = out / f"mcs_{tag}_{loss}.json"
            with open(path, "w") as fh:
                json.dump(res.to_json(), fh, indent=2, sort_keys=True)
            outputs.append(path)
    _write_manifest(out, "mcs", cfg,
                    [out / f"forecast_{_alpha_tag(a)}.csv" for a in cfg.alphas], outputs)
    return outputs


def stage_fixture(cfg: PipelineConfig, out: Path, days: int = 420,
                  n_per_day: int = 48) -> list:
    path = out / "fixture_intraday.csv"
    simulate_intraday_csv(path, days=days, n_per_day=n_per_day, seed=cfg.seed)
    _write_manifest(out, "fixture", cfg, [], [path])
    return [path]


_STAGES = {
    "measures": stage_measures,
    "factors": stage_factors,
    "fit": stage_fit,
    "forecast": stage_forecast,
    "backtest": stage_backtest,
    "score": stage_score,
    "mcs": stage_mcs,
}

_STAGE_INPUTS = {
    "measures": lambda cfg, out: [p for p in (cfg.intraday, cfg.daily) if p],
    "factors": lambda cfg, out: [out / "measures.csv"],
    "fit": lambda cfg, out: [out / "measures.csv", out / "factors.csv"],
    "forecast": lambda cfg, out: [out / "measures.csv", out / "factors.csv"],
    "backtest": lambda cfg, out: [out / f"forecast_{_alpha_tag(a)}.csv"
                                  for a in cfg.alphas],
    "score": lambda cfg, out: [out / f"forecast_{_alpha_tag(a)}.csv"
                               for a in cfg.alphas],
    "mcs": lambda cfg, out: [out / f"forecast_{_alpha_tag(a)}.csv"
                             for a in cfg.alphas],
}


def run_subcommand(name: str, cfg: PipelineConfig, force: bool = False,
                   fixture_days: int = 420) -> list:
    """Run one stage (or the whole pipeline) and return artifact paths."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if name == "fixture":
        if cfg.seed is None:
            raise ConfigError("a seed is required (set [run] seed or --seed)")
        return stage_fixture(cfg, out, days=fixture_days)
    cfg.validate()
    if name == "pipeline":
        outputs = []
        for stage in ("measures", "factors", "fit", "forecast", "backtest",
                      "score", "mcs"):
            inputs = [p for p in _STAGE_INPUTS[stage](cfg, out) if Path(p).exists()]
            if not force and inputs and _stage_current(out, stage, cfg, inputs):
                continue
            outputs += _STAGES[stage](cfg, out)
        return outputs
    if name not in _STAGES:
        raise ConfigError(f"unknown subcommand {name!r}")
    return _STAGES[name](cfg, out)


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tailrisk",
        description="joint VaR/ES forecasting and evaluation pipeline")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
            ("fixture", "write a deterministic synthetic intraday fixture"),
            ("measures", "compute the realized measure panel"),
            ("factors", "standardize the panel and extract the risk factor"),
            ("fit", "full in-sample estimation at each alpha"),
            ("forecast", "rolling out-of-sample VaR/ES for the model roster"),
            ("backtest", "coverage and ES tests per model"),
            ("score", "per-day losses per model"),
            ("mcs", "model confidence set over the roster"),
            ("pipeline", "run all stages in order (cached stages skipped)")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help=f"INI config path (default ${ENV_CONFIG})")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--intraday")
        p.add_argument("--daily")
        p.add_argument("--split-date", dest="split_date")
        p.add_argument("--oos-length", dest="oos_length", type=int)
        p.add_argument("--alphas", type=lambda s: tuple(float(v) for v in s.split(",")))
        p.add_argument("--loss", dest="losses",
                       type=lambda s: tuple(s.split(",")))
        p.add_argument("--level", dest="mcs_level", type=float)
        p.add_argument("--iters", dest="mcs_iters", type=int)
        p.add_argument("--roster", type=lambda s: tuple(s.split(",")))
        p.add_argument("--refit-every", dest="refit_every", type=int)
        p.add_argument("--n-starts", dest="n_starts", type=int)
        p.add_argument("--max-evals", dest="max_evals", type=int)
        p.add_argument("--window", choices=("fixed", "expanding"))
        p.add_argument("--plot", action="store_true", default=None)
        p.add_argument("--force", action="store_true",
                       help="ignore cached stage manifests")
        if name == "fixture":
            p.add_argument("--days", type=int, default=420,
                           help="number of trading days to synthesize")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k, None) for k in PipelineConfig.__dataclass_fields__}
    try:
        cfg = load_config(args.config, overrides)
        artifacts = run_subcommand(args.command, cfg, force=bool(args.force),
                                   fixture_days=getattr(args, "days", 420))
        for p in artifacts:
            print(p)
        return 0
    except TailriskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
