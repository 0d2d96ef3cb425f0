"""
Command-line front end.

Subcommands::

    sfem validate CSV
    sfem synth    --seed S --out DIR [--config FILE]
    sfem fit      --in CSV --k K --seed S --out DIR
    sfem sweep    --in CSV --kmin A --kmax B --seed S --out DIR
    sfem pipeline --in CSV --seed S --out-dir DIR
    sfem report   --model MODEL --in CSV --out-dir DIR [--level2-model MODEL]

Settings may come from a flat JSON config file (``--config``) whose keys are
the :class:`RunConfig` field names; command-line flags override it. Every
run writes the fully resolved settings to ``config.json`` in its output
directory, and ``--config DIR/config.json`` reproduces the run.

Exit status: 0 on success, 1 on data/runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import SyntheticConfig, generate_synthetic, group_by_trial, load_cycles, write_cycles
from .errors import InvalidConfig, SfemError
from .fisher_em import FitConfig, e_step, fit, sweep_k
from .model import Variant, load_model, save_model
from .pipeline import PipelineConfig, build_reports, run_two_level, trial_transitions, write_reports
from .reports import REPORT_FILES

logger = logging.getLogger("sfem")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str | None = None
    input: str | None = None
    output: str | None = None
    model: str | None = None
    level2_model: str | None = None
    seed: int | None = None
    workers: int = 1
    # fitting
    k: int | None = None
    kmin: int = 2
    kmax: int = 8
    d: int | None = None
    variant: str = "FullPerCluster"
    sparse_lambda: float = 0.2
    tol: float = 1e-6
    max_iter: int = 200
    restarts: int = 5
    ridge: float | None = None
    init: str = "kmeans"
    require_groups: bool = False
    key_point_threshold: float = 0.5
    # pipeline
    k1: int | None = None
    k1min: int = 2
    k1max: int = 8
    k2: int | None = None
    k2min: int = 2
    k2max: int = 8
    level2_variant: str = "SharedBeta"
    # synthetic cohort
    K: int = 4
    latent_dim: int | None = None
    p: int = 100
    n: int | None = None
    n_swimmers: int = 24
    n_sessions: int = 16
    n_trials: int = 10
    trial_len_min: int = 6
    trial_len_max: int = 10
    regimes: int = 3
    regime_strength: float = 0.7
    beta: float = 25.0
    sigma: float = 5.0
    separation: float = 5.0
    planted_features: object = 10
    mixing: list | None = None
    group_affinity: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)

    def fit_config(self, seed=None, variant=None, sparse_lambda=None):
        lam = self.sparse_lambda if sparse_lambda is None else sparse_lambda
        return FitConfig(
            seed=self.seed if seed is None else seed,
            d=self.d,
            variant=variant or self.variant,
            max_iter=self.max_iter,
            tol=self.tol,
            n_restarts=self.restarts,
            ridge=self.ridge,
            init=self.init,
            sparse_lambda=lam or None,
            workers=self.workers,
        )

    def synthetic_config(self):
        return SyntheticConfig(
            K=self.K, d=self.latent_dim, p=self.p, n=self.n,
            n_swimmers=self.n_swimmers, n_sessions=self.n_sessions, n_trials=self.n_trials,
            trial_len_range=(self.trial_len_min, self.trial_len_max),
            regimes=self.regimes, regime_strength=self.regime_strength,
            beta=self.beta, sigma=self.sigma, separation=self.separation,
            planted_features=tuple(self.planted_features) if isinstance(self.planted_features, list) else self.planted_features,
            mixing=tuple(self.mixing) if self.mixing else None,
            group_affinity=self.group_affinity,
        )


FIELD_NAMES = {f.name for f in fields(RunConfig)}


def _read_config_file(path):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a flat JSON object")
    unknown = sorted(set(doc) - FIELD_NAMES)
    if unknown:
        raise UsageError(f"unknown config key(s): {unknown}")
    return doc


def resolve_config(args):
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(_read_config_file(args.config))
    for name in FIELD_NAMES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    values["command"] = args.command
    cfg = RunConfig(**values)
    return cfg


FLAG_NAMES = {"input": "--in", "output": "--out"}


def _require(cfg, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        flags = [FLAG_NAMES.get(m, "--" + m.replace("_", "-")) for m in missing]
        raise UsageError(f"{cfg.command}: missing required setting(s): {', '.join(flags)}")


def _write_config(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")


def _load(cfg):
    return load_cycles(cfg.input, require_groups=cfg.require_groups)


# --------------------------------------------------------------------------
# commands


def cmd_validate(cfg):
    _require(cfg, "input")
    ds = _load(cfg)
    index = group_by_trial(ds)
    print(f"{cfg.input}: valid, n={ds.n} cycles, p={ds.p}, {len(index)} trials, "
          f"groups {'complete' if ds.has_groups else 'incomplete'}", file=sys.stderr)


def cmd_synth(cfg):
    _require(cfg, "seed", "output")
    ds, truth = generate_synthetic(cfg.synthetic_config(), seed=cfg.seed)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_cycles(ds, out / "cycles.csv")
    truth.write(out / "truth.json")
    _write_config(cfg, out)
    logger.info("wrote %d cycles to %s", ds.n, out / "cycles.csv")


def _fit_outputs(out, ds, report):
    save_model(report.params, out / "model.json", seed=report.seed,
               diagnostics={"iterations": report.iterations, "converged": report.converged,
                            "loglik": report.loglik, "bic": report.bic})
    report.write(out / "fit_report.json")
    with (out / "labels.csv").open("w") as fh:
        fh.write("swimmer_id,session,trial,cycle_index,label\n")
        for i in range(ds.n):
            fh.write(f"{ds.swimmer_id[i]},{ds.session[i]},{ds.trial[i]},{ds.cycle_index[i]},{report.labels[i]}\n")


def cmd_fit(cfg):
    _require(cfg, "input", "k", "seed", "output")
    ds = _load(cfg)
    report = fit(ds.values, cfg.k, cfg.fit_config())
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _fit_outputs(out, ds, report)
    _write_config(cfg, out)


def cmd_sweep(cfg):
    _require(cfg, "input", "seed", "output")
    if cfg.kmin < 2 or cfg.kmax < cfg.kmin:
        raise UsageError("need 2 <= kmin <= kmax")
    ds = _load(cfg)
    sweep = sweep_k(ds.values, range(cfg.kmin, cfg.kmax + 1), cfg.fit_config())
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    sweep.write_csv(out / "sweep.csv")
    sweep.write_json(out / "sweep.json")
    _fit_outputs(out, ds, sweep.best)
    _write_config(cfg, out)


def pipeline_config(cfg):
    return PipelineConfig(
        level1=cfg.fit_config(),
        level2=cfg.fit_config(variant=cfg.level2_variant, sparse_lambda=0),
        k1_range=(cfg.k1min, cfg.k1max),
        k2_range=(cfg.k2min, cfg.k2max),
        k1=cfg.k1,
        k2=cfg.k2,
        key_point_threshold=cfg.key_point_threshold,
    )


def cmd_pipeline(cfg):
    _require(cfg, "input", "seed", "output")
    ds = _load(cfg)
    result = run_two_level(ds, pipeline_config(cfg))
    result.write(cfg.output, ds)
    _write_config(cfg, cfg.output)


def cmd_report(cfg):
    _require(cfg, "model", "input", "output")
    ds = _load(cfg)
    params, _ = load_model(cfg.model)
    if params.p != ds.p:
        raise InvalidConfig(f"model expects p={params.p}, data has p={ds.p}")
    labels = e_step(params, ds.values).hard_labels
    K1 = params.K
    transitions = trial_transitions(ds, labels, K1)
    if cfg.level2_model:
        params2, _ = load_model(cfg.level2_model)
        if params2.p != K1 * K1:
            raise InvalidConfig(f"level-2 model expects p={params2.p}, transitions have {K1 * K1} entries")
        trial_labels = e_step(params2, np.array([v.counts for v in transitions], dtype=float)).hard_labels
        label_name = "level2_cluster"
    else:
        # no trial model: profile transitions per learning group
        index = group_by_trial(ds)
        trial_labels = [ds.group[rows[0]] or "all" for rows in index.values()]
        label_name = "group"
    reports = build_reports(ds, labels, K1, params.U, transitions, trial_labels,
                            cfg.key_point_threshold, profile_label=label_name)
    if reports["group_distribution"] is None:
        raise SfemError("group distribution needs learning groups on every cycle")
    write_reports(cfg.output, reports, K1, ds.p)
    _write_config(cfg, cfg.output)


COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
    "report": cmd_report,
}


def _fit_flags(p):
    p.add_argument("--d", type=int, help="latent dimension (default K-1)")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--lambda", dest="sparse_lambda", type=float, help="sparsity threshold fraction (default 0.2; 0 = dense)")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument("--init", choices=["kmeans", "random"])
    p.add_argument("--workers", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="sfem", description="Sparse Fisher-EM clustering of movement cycles.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", help="check a cycle CSV")
    p.add_argument("input")
    p.add_argument("--require-groups", dest="require_groups", action="store_const", const=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output")
    for name, typ in (("K", int), ("p", int), ("n", int), ("regimes", int), ("beta", float), ("sigma", float),
                      ("separation", float), ("n-swimmers", int), ("n-sessions", int), ("n-trials", int)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)

    for name, helptext in (("fit", "fit one model"), ("sweep", "BIC sweep over K")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        p.add_argument("--in", dest="input")
        p.add_argument("--out", dest="output")
        p.add_argument("--seed", type=int)
        p.add_argument("--require-groups", dest="require_groups", action="store_const", const=True)
        if name == "fit":
            p.add_argument("--k", type=int)
        else:
            p.add_argument("--kmin", type=int)
            p.add_argument("--kmax", type=int)
        _fit_flags(p)

    p = sub.add_parser("pipeline", help="two-level cycle/trial clustering")
    p.add_argument("--config")
    p.add_argument("--in", dest="input")
    p.add_argument("--out-dir", dest="output")
    p.add_argument("--seed", type=int)
    p.add_argument("--require-groups", dest="require_groups", action="store_const", const=True)
    for name in ("k1", "k1min", "k1max", "k2", "k2min", "k2max"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--level2-variant", dest="level2_variant", choices=[v.value for v in Variant])
    p.add_argument("--key-point-threshold", dest="key_point_threshold", type=float)
    _fit_flags(p)

    p = sub.add_parser("report", help="report tables for a fitted level-1 model")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--level2-model", dest="level2_model")
    p.add_argument("--in", dest="input")
    p.add_argument("--out-dir", dest="output")
    p.add_argument("--key-point-threshold", dest="key_point_threshold", type=float)
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except (UsageError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"sfem: error: {exc}", file=sys.stderr)
        return 2
    except (SfemError, OSError, ValueError) as exc:
        print(f"sfem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
