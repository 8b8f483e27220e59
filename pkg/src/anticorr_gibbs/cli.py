"""Command-line experiment runner.

Effective configuration = built-in defaults, then an INI file (``--config``),
then command-line flags. ``show-config`` prints the result as INI.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .anticorr import (DEFAULT_EPSILON, SERIES_EPS, SERIES_RHO, AntiCorrSpec, DirectAnticorr,
                       RegressionOmega, regression_d, sample_anticorr_regression,
                       sample_anticorr_series, series_truncation)
from .diagnostics import (MIN_ESS_LENGTH, CompSliceLinReg, autocorrelation, energy_distance_test,
                          ess_report, interval_selection_metrics, moment_zscores)
from .distributions import TruncInterval, truncnorm_mean
from .engine import ChainConfig, TruncatedMvnModel, run_chain
from .exceptions import ConfigError, InvalidInputError, NumericError
from .models import (STGP_NUGGET, LinRegModel, LinRegSampler, StgpModel, StgpSampler,
                     simulate_regression, simulate_stgp_image)
from .spectral_linalg import full_svd, spectral_upper_bound

OUTPUT_ENV = "ANTICORR_GIBBS_OUTPUT"
SCHEMA_VERSION = 1
EXPERIMENTS = ("linreg", "stgp", "tmvn", "anticorr-check")
SAMPLERS = ("blocked-gibbs", "comp-slice")
METHODS = ("direct", "svd", "series")
ACF_LAGS = 50

log = logging.getLogger("anticorr_gibbs")


@dataclass
class RunConfig:
    experiment: str = "linreg"
    # linreg simulation
    n: int = 300
    p: int = 50
    rho: float = 0.5
    c: float = 3.0
    # run control; iterations/burn_in of 0 mean "use the experiment default"
    iterations: int = 0
    burn_in: int = -1
    thinning: int = 1
    seeds: list = field(default_factory=lambda: [1])
    workers: int = 1
    sampler: str = "blocked-gibbs"
    anticorr_method: str = "direct"
    epsilon: float = DEFAULT_EPSILON
    eps_series: float = SERIES_EPS
    rho_target: float = SERIES_RHO
    output_dir: str = ""
    # stgp
    n1: int = 30
    n2: int = 30
    tau_true: float = 1.0
    xi_true: float = 2.0
    kappa_true: float = 0.5
    sigma2_true: float = 0.25
    nugget: float = STGP_NUGGET
    # tmvn
    dim: int = 10
    lower: float = -4.0
    upper: float = -3.0
    mean: float = 0.0
    offdiag: float = 0.0
    # anticorr-check
    instances: int = 20
    draws: int = 20000
    max_dim: int = 12
    d_scale: float = 1.0

    def resolved(self):
        """Copy with experiment-dependent defaults filled in, validated."""
        cfg = RunConfig(**asdict(self))
        if cfg.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {cfg.experiment!r}")
        if cfg.iterations == 0:
            cfg.iterations, default_burn = {
                "linreg": (20000, 10000) if cfg.rho >= 0.9 else (10000, 2000),
                "stgp": (3000, 1000),
                "tmvn": (12000, 2000),
                "anticorr-check": (1, 0),
            }[cfg.experiment]
            if cfg.burn_in < 0:
                cfg.burn_in = default_burn
        if cfg.burn_in < 0:
            cfg.burn_in = 0
        if not cfg.output_dir:
            cfg.output_dir = os.environ.get(OUTPUT_ENV, "anticorr_output")
        cfg.validate()
        return cfg

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(self.iterations > self.burn_in >= 0, "need iterations > burn_in >= 0")
        need(self.thinning >= 1, "thinning must be at least 1")
        need(len(self.seeds) > 0, "seeds must be non-empty")
        need(len(set(self.seeds)) == len(self.seeds), "seeds must be distinct")
        need(all(s >= 0 for s in self.seeds), "seeds must be non-negative")
        need(self.workers >= 1, "workers must be at least 1")
        need(self.sampler in SAMPLERS, f"sampler must be one of {SAMPLERS}")
        need(self.anticorr_method in METHODS, f"anticorr_method must be one of {METHODS}")
        need(self.epsilon > 0 and 0 < self.eps_series < 1, "epsilon and eps_series must be > 0")
        need(0 < self.rho_target < 1, "rho_target must lie in (0, 1)")
        need(self.n >= 1 and self.p >= 1, "n and p must be positive")
        need(abs(self.rho) < 1, "rho must satisfy |rho| < 1")
        if self.experiment == "linreg":
            need(self.p >= 10, "linreg needs p >= 10")
        need(self.n1 >= 1 and self.n2 >= 1, "grid dimensions must be positive")
        need(self.tau_true > 0 and self.xi_true > 0 and self.sigma2_true >= 0
             and self.kappa_true >= 0 and self.nugget > 0, "invalid STGP parameters")
        need(self.lower < self.upper, "tmvn box must satisfy lower < upper")
        need(self.dim >= 1, "tmvn dimension must be positive")
        need(-1.0 / max(self.dim - 1, 1) < self.offdiag < 1,
             "offdiag must keep the covariance positive definite")
        need(self.instances >= 1 and self.draws >= 100, "anticorr-check needs draws >= 100")
        need(1 <= self.max_dim, "max_dim must be positive")
        need(self.d_scale > 0, "d_scale must be positive")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_SECTION_EXPERIMENTS = {"linreg", "stgp", "tmvn", "anticorr-check"}


def _coerce(name, value):
    kind = _FIELD_TYPES.get(name)
    if kind is None:
        raise ConfigError(f"unknown configuration key {name!r}")
    try:
        if kind is list:
            if isinstance(value, (list, tuple)):
                return [int(v) for v in value]
            return [int(v) for v in str(value).replace(",", " ").split()]
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def load_ini(path, experiment):
    """Read ``[run]`` plus the experiment's own section from an INI file."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section in parser.sections():
        if section != "run" and section not in _SECTION_EXPERIMENTS:
            raise ConfigError(f"unknown config section [{section}]")
    out = {}
    for section in ("run", experiment):
        if parser.has_section(section):
            for key, value in parser.items(section):
                out[key.replace("-", "_")] = _coerce(key.replace("-", "_"), value)
    return out


def dump_ini(cfg):
    parser = configparser.ConfigParser()
    parser["run"] = {}
    for k, v in asdict(cfg).items():
        parser["run"][k] = " ".join(map(str, v)) if isinstance(v, list) else str(v)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------- outputs


def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_acf(path, store, columns):
    rows = []
    lags = min(ACF_LAGS, store.draws.shape[0] - 1)
    for j in columns:
        acf, _ = autocorrelation(store.draws[:, j], lags)
        rows.extend([store.names[j], k, _fmt(a)] for k, a in enumerate(acf))
    _write_csv(path, ["parameter", "lag", "acf"], rows)


def _write_grid(path, values, n1, n2):
    grid = np.asarray(values, dtype=float).reshape(n1, n2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow([_fmt(v) for v in row])


def seed_streams(seed):
    """Independent integer seeds for data simulation and for the chain."""
    data, chain = np.random.SeedSequence(seed).spawn(2)
    return int(data.generate_state(1)[0]), int(chain.generate_state(1)[0])


def _chain_config(cfg):
    return ChainConfig(cfg.iterations, cfg.burn_in, cfg.thinning)


def _base_summary(cfg, seed, store):
    return {"schema_version": SCHEMA_VERSION, "experiment": cfg.experiment, "seed": seed,
            "iterations": store.iterations, "burn_in": store.burn_in,
            "thinning": store.thinning, "wall_seconds": store.wall_seconds,
            "n_retained": int(store.draws.shape[0])}


# ---------------------------------------------------------------- experiments


def _run_linreg_seed(cfg, seed, outdir):
    data_seed, chain_seed = seed_streams(seed)
    x, y, truth = simulate_regression(cfg.n, cfg.p, cfg.rho, cfg.c, data_seed)
    model = LinRegModel(x, y)
    if cfg.sampler == "blocked-gibbs":
        sampler = LinRegSampler(model, method=cfg.anticorr_method, epsilon=cfg.epsilon,
                                eps_series=cfg.eps_series, rho_target=cfg.rho_target)
    else:
        sampler = CompSliceLinReg(model)
    store = run_chain(_chain_config(cfg), sampler, chain_seed, trace_keys=("sigma2", "kappa0"))
    theta = store.draws[:, :cfg.p]
    metrics = interval_selection_metrics(theta, truth)
    if theta.shape[0] >= MIN_ESS_LENGTH:
        ess = ess_report(theta, store.wall_seconds).to_dict()
    else:
        log.warning("fewer than %d retained draws; ESS not reported", MIN_ESS_LENGTH)
        ess = {"ess_mean": None, "ess_per_second_first10": None, "ess_per_second_rest": None}
    summary = {**_base_summary(cfg, seed, store), **metrics.to_dict(), **ess,
               "sampler": cfg.sampler, "anticorr_method": cfg.anticorr_method,
               "n": cfg.n, "p": cfg.p, "rho": cfg.rho, "c": cfg.c}
    store.to_csv(outdir / "draws.csv")
    store.trace_to_csv(outdir / "traces.csv", store.extra["traces"])
    _write_acf(outdir / "acf.csv", store, range(min(10, cfg.p)))
    return summary


def _run_stgp_seed(cfg, seed, outdir):
    data_seed, chain_seed = seed_streams(seed)
    y, truth, _ = simulate_stgp_image(cfg.n1, cfg.n2, tau=cfg.tau_true, xi=cfg.xi_true,
                                      kappa=cfg.kappa_true, sigma2=cfg.sigma2_true,
                                      seed=data_seed)
    model = StgpModel(y, cfg.n1, cfg.n2, nugget=cfg.nugget, epsilon=cfg.epsilon)
    store = run_chain(_chain_config(cfg), StgpSampler(model), chain_seed,
                      trace_keys=("sigma2", "tau_gp", "xi_index", "kappa0"))
    draws = store.draws
    post_mean = draws.mean(axis=0)
    summary = {**_base_summary(cfg, seed, store),
               "mse": float(np.mean((post_mean - truth) ** 2)),
               "n1": cfg.n1, "n2": cfg.n2, "nugget": cfg.nugget}
    store.to_csv(outdir / "draws.csv")
    store.trace_to_csv(outdir / "traces.csv", store.extra["traces"])
    _write_acf(outdir / "acf.csv", store, range(min(10, model.p)))
    _write_grid(outdir / "posterior_mean.csv", post_mean, cfg.n1, cfg.n2)
    _write_grid(outdir / "posterior_sd.csv", draws.std(axis=0), cfg.n1, cfg.n2)
    _write_grid(outdir / "inclusion_prob.csv", np.mean(draws != 0, axis=0), cfg.n1, cfg.n2)
    _write_grid(outdir / "truth.csv", truth, cfg.n1, cfg.n2)
    _write_grid(outdir / "data.csv", y, cfg.n1, cfg.n2)
    return summary


def _tmvn_covariance(p, offdiag):
    return (1.0 - offdiag) * np.eye(p) + offdiag * np.ones((p, p))


def _run_tmvn_seed(cfg, seed, outdir):
    _, chain_seed = seed_streams(seed)
    p = cfg.dim
    cov = _tmvn_covariance(p, cfg.offdiag)
    box = TruncInterval(np.full(p, cfg.lower), np.full(p, cfg.upper))
    model = TruncatedMvnModel(np.full(p, cfg.mean), np.linalg.inv(cov), box, epsilon=cfg.epsilon)
    store = run_chain(_chain_config(cfg), model, chain_seed)
    draws = store.draws
    inside = bool(np.all((draws > cfg.lower) & (draws < cfg.upper)))
    summary = {**_base_summary(cfg, seed, store), "p": p, "all_inside": inside,
               "marginal_means": draws.mean(axis=0).tolist(),
               "marginal_sds": draws.std(axis=0).tolist()}
    if cfg.offdiag == 0.0:
        exact = float(truncnorm_mean(cfg.mean, 1.0, cfg.lower, cfg.upper))
        summary["analytic_mean"] = exact
        summary["max_abs_mean_error"] = float(np.max(np.abs(draws.mean(axis=0) - exact)))
    store.to_csv(outdir / "draws.csv")
    store.trace_to_csv(outdir / "traces.csv")
    _write_acf(outdir / "acf.csv", store, range(min(10, p)))
    return summary


def random_regression_instance(rng, max_dim=12):
    """Random ``(X, Omega, theta, d)`` with ``d`` valid for all three samplers."""
    n = int(rng.integers(1, max_dim + 1))
    p = int(rng.integers(1, max_dim + 1))
    x = rng.standard_normal((n, p))
    omega = RegressionOmega(rng.uniform(0.5, 2.0, n))
    theta = rng.standard_normal(p)
    svd = full_svd(x)
    d = regression_d(svd, omega, safety=1.0 / SERIES_RHO * 1.02)
    return x, omega, theta, d, svd


def anticorr_equivalence(n_instances, n_draws, rng, max_dim=12, n_energy=1000, n_perm=199,
                         d_scale=1.0):
    """Cross-check the direct, SVD and series samplers on random instances.

    Returns a list of per-instance dicts with the largest mean and covariance
    z-scores per method and the pairwise energy-test p-values.
    """
    n_energy = min(n_energy, n_draws // 2)
    report = []
    for i in range(n_instances):
        x, omega, theta, d, svd = random_regression_instance(rng, max_dim)
        d *= d_scale
        m = (x.T * omega.omega_diag) @ x
        target_mean = d * theta - m @ theta
        target_cov = d * np.eye(x.shape[1]) - m
        samples = {
            "direct": DirectAnticorr(m, d).sample(theta, rng, size=n_draws),
            "svd": sample_anticorr_regression(svd, omega, AntiCorrSpec(d), theta, rng,
                                              size=n_draws, x=x),
            "series": sample_anticorr_series(x, omega, d, theta, rng, size=n_draws,
                                             m_bound=spectral_upper_bound(m)),
        }
        entry = {"instance": i, "n": x.shape[0], "p": x.shape[1], "d": d}
        for name, draws in samples.items():
            zm, zc = moment_zscores(draws, target_mean, target_cov)
            entry[f"{name}_max_z_mean"] = float(np.max(np.abs(zm)))
            entry[f"{name}_max_z_cov"] = float(np.max(np.abs(zc)))
        names = list(samples)
        for a in range(3):
            for b in range(a + 1, 3):
                sa = samples[names[a]][:n_energy]
                sb = samples[names[b]][n_energy:2 * n_energy]
                _, pval = energy_distance_test(sa, sb, rng, n_perm=n_perm)
                entry[f"energy_p_{names[a]}_{names[b]}"] = pval
        report.append(entry)
    return report


def _run_anticorr_check(cfg, seed, outdir):
    rng = np.random.default_rng(seed)
    k_hat, passes = series_truncation(cfg.eps_series, cfg.rho_target)
    report = anticorr_equivalence(cfg.instances, cfg.draws, rng, max_dim=cfg.max_dim,
                                  d_scale=cfg.d_scale)
    worst_z = max(max(v for k, v in e.items() if "_max_z_" in k) for e in report)
    min_p = min(min(v for k, v in e.items() if k.startswith("energy_p_")) for e in report)
    passed = worst_z <= 5.0 and min_p > 0.01
    header = list(report[0])
    _write_csv(outdir / "instances.csv", header,
               [[e[k] if isinstance(e[k], int) else _fmt(e[k]) for k in header] for e in report])
    return {"schema_version": SCHEMA_VERSION, "experiment": cfg.experiment, "seed": seed,
            "series_k_hat": k_hat, "series_passes": passes, "max_abs_z": worst_z,
            "min_energy_p": min_p, "passed": passed, "instances": cfg.instances,
            "draws": cfg.draws}


RUNNERS = {
    "linreg": _run_linreg_seed,
    "stgp": _run_stgp_seed,
    "tmvn": _run_tmvn_seed,
    "anticorr-check": _run_anticorr_check,
}


def run_experiment(cfg):
    """Run every seed of ``cfg`` (already resolved); returns the aggregate summary."""
    root = Path(cfg.output_dir) / cfg.experiment
    runner = RUNNERS[cfg.experiment]

    def one(seed):
        log.info("%s: seed %d", cfg.experiment, seed)
        outdir = root / f"seed_{seed}"
        outdir.mkdir(parents=True, exist_ok=True)
        summary = runner(cfg, seed, outdir)
        _write_json(outdir / "summary.json", summary)
        return summary

    seeds = sorted(cfg.seeds)
    if cfg.workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    aggregate = {"schema_version": SCHEMA_VERSION, "experiment": cfg.experiment,
                 "config": asdict(cfg), "runs": results}
    for key in ("fpr", "fnr", "mse", "ess_per_second_first10", "wall_seconds"):
        vals = [r[key] for r in results if r.get(key) is not None]
        if vals:
            aggregate[f"mean_{key}"] = float(np.mean(vals))
    _write_json(root / "summary.json", aggregate)
    return aggregate


# ---------------------------------------------------------------- argument parsing


def _add_common(sp):
    g = sp.add_argument_group("run control")
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--iterations", type=int)
    g.add_argument("--burn-in", type=int)
    g.add_argument("--thinning", type=int)
    g.add_argument("--seeds", help="comma- or space-separated integer seeds")
    g.add_argument("--workers", type=int, help="parallel chains (one thread per seed)")
    g.add_argument("--epsilon", type=float, help="margin added to the spectral bound")
    g.add_argument("--output-dir", help=f"output root (default ${OUTPUT_ENV} or ./anticorr_output)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="anticorr-gibbs",
        description="Blocked Gibbs sampling with anti-correlation Gaussian augmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("linreg", help="sparse linear regression simulation")
    _add_common(sp)
    for flag, kind in (("--n", int), ("--p", int), ("--rho", float), ("--c", float),
                       ("--eps-series", float), ("--rho-target", float)):
        sp.add_argument(flag, type=kind)
    sp.add_argument("--sampler", choices=SAMPLERS)
    sp.add_argument("--anticorr-method", choices=METHODS)

    sp = sub.add_parser("stgp", help="soft-thresholded GP image simulation")
    _add_common(sp)
    for flag, kind in (("--n1", int), ("--n2", int), ("--tau-true", float),
                       ("--xi-true", float), ("--kappa-true", float),
                       ("--sigma2-true", float), ("--nugget", float)):
        sp.add_argument(flag, type=kind)

    sp = sub.add_parser("tmvn", help="box-truncated multivariate normal")
    _add_common(sp)
    sp.add_argument("--p", dest="dim", type=int)
    for flag, kind in (("--lower", float), ("--upper", float), ("--mean", float),
                       ("--offdiag", float)):
        sp.add_argument(flag, type=kind)

    sp = sub.add_parser("anticorr-check", help="cross-method anti-correlation sampler check")
    _add_common(sp)
    for flag, kind in (("--instances", int), ("--draws", int), ("--max-dim", int),
                       ("--d-scale", float), ("--eps-series", float), ("--rho-target", float)):
        sp.add_argument(flag, type=kind)

    sp = sub.add_parser("show-config", help="print the effective configuration")
    sp.add_argument("experiment", choices=EXPERIMENTS)
    _add_common(sp)
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "experiment"}


def config_from_args(args):
    experiment = args.experiment if args.command == "show-config" else args.command
    values = {"experiment": experiment}
    if args.config:
        values.update(load_ini(args.config, experiment))
    for key, value in vars(args).items():
        if key in _NOT_CONFIG or value is None:
            continue
        values[key] = _coerce(key, value)
    values["experiment"] = experiment
    return RunConfig(**values).resolved()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "show-config":
        sys.stdout.write(dump_ini(cfg))
        return 0
    try:
        aggregate = run_experiment(cfg)
    except (NumericError, InvalidInputError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    keys = [k for k in aggregate if k.startswith("mean_")]
    for k in keys:
        print(f"{k} = {aggregate[k]:.6g}")
    if cfg.experiment == "anticorr-check":
        run = aggregate["runs"][0]
        print(f"series K_hat = {run['series_k_hat']}, passes = {run['series_passes']}")
        print(f"max |z| = {run['max_abs_z']:.3f}, min energy p = {run['min_energy_p']:.3f}, "
              f"{'PASS' if run['passed'] else 'FAIL'}")
    print(f"outputs in {Path(cfg.output_dir) / cfg.experiment}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
