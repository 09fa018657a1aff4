"""Command-line runner: ``sagabed {run,nmc-ref,posterior,validate-config}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 model lacks a required capability.
"""

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import sklearn

from . import __version__
from .bed_loop import run_pathwise_baseline, run_saga_bed
from .config import load_config
from .exceptions import ConfigError, SagabedError, UnsupportedModelError
from .mi_estimators import nmc_terms
from .nn_core import Critic
from .posterior import (
    PosteriorModel,
    categorical_sample,
    mh_sample,
    observe,
    summarize,
    write_samples_csv,
)

logger = logging.getLogger("sagabed")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_UNSUPPORTED = 0, 2, 3, 4
MANIFEST_VERSION = 1


class ArtifactError(SagabedError):
    """A run directory is missing a file or holds an unreadable one."""


def bundled_config(name):
    """Path of a config shipped with the package, e.g. ``linear_d1``."""
    ref = resources.files("sagabed") / "configs" / f"{name}.yaml"
    if not ref.is_file():
        raise ConfigError(f"no bundled config named '{name}'")
    return Path(str(ref))


def list_bundled_configs():
    root = resources.files("sagabed") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _resolve_config(spec):
    path = Path(spec)
    if path.exists():
        return load_config(path)
    if not path.suffix and spec in list_bundled_configs():
        return load_config(bundled_config(spec))
    raise ConfigError(f"config file not found: {spec}")


def _versions():
    return {
        "sagabed": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        changes["n_jobs"] = max(1, args.threads)
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = str(args.out)
    return replace(cfg, **changes) if changes else cfg


def _run_dir(cfg):
    if cfg.output_dir is None:
        raise ConfigError("no output directory: set output_dir or pass --out", key="output_dir")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_design(path, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "xi"])
        for j, v in enumerate(values):
            writer.writerow([j, repr(float(v))])


def _read_design(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


def _append_nmc(run_dir, xi, terms, n_outer, n_inner, seed):
    path = Path(run_dir) / "nmc_ref.csv"
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["mi", "std_error", "n_outer", "n_inner", "seed", "xi"])
        se = float(np.std(terms, ddof=1) / np.sqrt(terms.size))
        writer.writerow([repr(float(np.mean(terms))), repr(se), n_outer, n_inner, seed, " ".join(repr(float(v)) for v in xi)])


def cmd_run(args):
    cfg = _apply_overrides(_resolve_config(args.config), args)
    out = _run_dir(cfg)
    bed = cfg.bed_config()
    model = cfg.build_model()
    runner = run_pathwise_baseline if bed.design_gradient == "pathwise" else run_saga_bed

    def progress(epoch, trace):
        if epoch % 50 == 0 or epoch == bed.n_epochs - 1:
            logger.info("epoch %d  smile %.4f  |grad xi| %.3g", epoch, trace.smile[-1], trace.grad_norm_xi[-1])

    xi_star, critic, trace = runner(bed, model, progress)
    trace.to_csv(out / "trace.csv")
    critic.save(out / "critic.txt")
    _write_design(out / "design.csv", xi_star.values)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "seed": cfg.seed,
        "versions": _versions(),
        "outputs": ["trace.csv", "critic.txt", "design.csv"],
        "plateau_smile": trace.plateau(),
        "config": cfg.to_dict(),
    }
    if cfg.nmc.enabled:
        terms = nmc_terms(model, xi_star.values, cfg.nmc.n_outer, cfg.nmc.n_inner, cfg.nmc.seed)
        _append_nmc(out, xi_star.values, terms, cfg.nmc.n_outer, cfg.nmc.n_inner, cfg.nmc.seed)
        manifest["outputs"].append("nmc_ref.csv")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"plateau SMILE (last 50 epochs): {trace.plateau():.4f}")
    print(f"design: {' '.join(f'{v:.4f}' for v in xi_star.values)}")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_nmc_ref(args):
    cfg = _apply_overrides(_resolve_config(args.config), args)
    model = cfg.build_model()
    if not model.has_likelihood:
        raise UnsupportedModelError(f"model '{model.name}' has no tractable likelihood; nested MC is unavailable")
    if args.xi:
        xi = np.asarray(args.xi, dtype=float)
    elif cfg.output_dir is not None and (Path(cfg.output_dir) / "design.csv").exists():
        xi = _read_design(Path(cfg.output_dir) / "design.csv")
    else:
        raise ConfigError("give the design with --xi or point --out at a finished run", key="xi")
    xi = model.check_design(np.broadcast_to(xi, (model.design_dim,)) if xi.size == 1 else xi)
    n_outer = args.n_outer or cfg.nmc.n_outer
    n_inner = args.n_inner or cfg.nmc.n_inner
    seed = cfg.nmc.seed if args.seed is None else args.seed
    terms = nmc_terms(model, xi, n_outer, n_inner, seed)
    mi = float(np.mean(terms))
    se = float(np.std(terms, ddof=1) / np.sqrt(terms.size))
    print(f"nested MC MI: {mi:.4f} +/- {se:.4f} (N={n_outer}, M={n_inner}, seed={seed})")
    if cfg.output_dir is not None:
        _append_nmc(_run_dir(cfg), xi, terms, n_outer, n_inner, seed)
    return EXIT_OK


def _load_run(run_dir):
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    for name in ("manifest.json", "critic.txt", "design.csv"):
        if not (run_dir / name).exists():
            raise ArtifactError(f"run directory {run_dir} has no {name}")
    cfg = load_config(manifest_path)
    try:
        critic = Critic.load(run_dir / "critic.txt")
    except ValueError as exc:
        raise ArtifactError(str(exc)) from exc
    return cfg, critic, _read_design(run_dir / "design.csv")


def cmd_posterior(args):
    cfg, critic, xi = _load_run(args.run_dir)
    settings = cfg.posterior
    changes = {k: getattr(args, k) for k in ("sampler", "chain_len", "burn_in", "thin", "n_draws", "pool_size") if getattr(args, k) is not None}
    if args.seed is not None:
        changes["seed"] = args.seed
    settings = replace(settings, **changes)
    model = cfg.build_model()
    rng = np.random.default_rng([settings.seed, 0])
    y_star = observe(model, xi, seed=rng)
    pm = PosteriorModel(critic, y_star, model, cfg.tau)
    if settings.sampler == "mh":
        info = mh_sample(
            pm,
            settings.chain_len,
            settings.burn_in,
            settings.proposal_scale,
            rng,
            settings.thin,
            return_info=True,
            target_acceptance=settings.target_acceptance,
        )
        samples = info.samples
        extra = {"acceptance_rate": info.acceptance_rate}
        print(f"acceptance rate: {info.acceptance_rate:.3f}")
    else:
        pool = model.sample_prior(settings.pool_size, rng)
        samples = categorical_sample(pm, pool, settings.n_draws, rng)
        extra = {"pool_size": settings.pool_size}
    names = list(model.theta_names)
    summary = summarize(samples, settings.sampler, settings.seed, names)
    run_dir = Path(args.run_dir)
    write_samples_csv(run_dir / f"posterior_{settings.sampler}.csv", samples, names)
    record = {**summary.to_dict(), **extra, "y_star": [float(v) for v in y_star], "theta_true": list(model.theta_true)}
    (run_dir / f"posterior_{settings.sampler}.json").write_text(json.dumps(record, indent=2) + "\n")
    for name, m, s in zip(names, summary.mean, summary.std):
        print(f"{name}: {m:.4f} +/- {s:.4f}")
    return EXIT_OK


def cmd_validate(args):
    source = args.config_flag or args.config
    if source is None:
        raise ConfigError("no config given", key="config")
    cfg = _resolve_config(source)
    print(f"{source}: ok ({cfg.model}, D={cfg.n_measurements}, {cfg.n_epochs} epochs)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sagabed", description="Gradient-free Bayesian experimental design for implicit models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress every 50 epochs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize a design and train the critic")
    run.add_argument("--config", required=True, help="YAML config, run manifest, or bundled config name")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, help="cap on worker threads for perturbation evaluation")
    run.set_defaults(func=cmd_run)

    nmc = sub.add_parser("nmc-ref", help="nested Monte Carlo reference MI (linear model only)")
    nmc.add_argument("--config", required=True)
    nmc.add_argument("--xi", type=float, nargs="+", help="design values; one value is broadcast")
    nmc.add_argument("--out", help="run directory to read design.csv from and append nmc_ref.csv to")
    nmc.add_argument("--n-outer", type=int)
    nmc.add_argument("--n-inner", type=int)
    nmc.add_argument("--seed", type=int)
    nmc.set_defaults(func=cmd_nmc_ref)

    post = sub.add_parser("posterior", help="sample the critic posterior of a finished run")
    post.add_argument("run_dir")
    post.add_argument("--sampler", choices=["mh", "categorical"])
    post.add_argument("--chain-len", type=int)
    post.add_argument("--burn-in", type=int)
    post.add_argument("--thin", type=int)
    post.add_argument("--n-draws", type=int)
    post.add_argument("--pool-size", type=int)
    post.add_argument("--seed", type=int)
    post.set_defaults(func=cmd_posterior)

    val = sub.add_parser("validate-config", help="parse and check a config without running it")
    val.add_argument("config", nargs="?", help="config path or bundled name")
    val.add_argument("--config", dest="config_flag", help="same as the positional argument")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedModelError as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (SagabedError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
