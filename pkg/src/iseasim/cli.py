"""Command-line front end.

Subcommands (all read a JSON config and write deterministic CSVs):

  estimator-sweep   sensing-SNR comparison of the three local estimators
                    under noise-free aggregation
  entropy-report    conditional aggregation entropies per noise profile
  tdm-compare       per-slot MSE/MD of the two TDM designs vs comm SNR
  fdm-compare       MSE/MD of the FDM designs and baselines vs comm SNR
  accuracy-sweep    end-to-end Monte Carlo accuracy sweep
  validate-solvers  brute-force oracle suite; prints pass/fail per check

Exit codes: 0 success, 1 usage error, 2 validation failure,
3 non-convergence budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import entropy, pipeline, solvers
from .prior import discriminative_prior
from .validation import NonConvergenceError, ValidationError

_DOM_COMPARE = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc


def _fmt(x) -> str:
    return "%.9g" % float(x)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _experiment_config(data: dict, seed_override=None) -> pipeline.ExperimentConfig:
    data = dict(data)
    data.pop("sweep_variable", None)
    data.pop("sweep_values", None)
    if seed_override is not None:
        data["seed"] = int(seed_override)
    return pipeline.ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_estimator_sweep(args) -> int:
    data = _load_config(args.config)
    seed = int(args.seed if args.seed is not None else data.get("seed", 0))
    prior = pipeline.default_prior(
        int(data.get("num_classes", 5)), int(data.get("feature_dim", 4)),
        float(data.get("min_md_target", 4.0)), int(data.get("prior_seed", 1234)),
    )
    grid = data.get("sensing_snr_grid_db",
                    [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0])
    records = pipeline.estimator_sweep(
        prior, int(data.get("num_devices", 3)), grid,
        int(data.get("trials", 20000)), seed,
        responsibility_noise_var=data.get("responsibility_noise_var"),
    )
    pipeline.export_estimator_sweep(records, args.output)
    return 0


def _cmd_entropy_report(args) -> int:
    data = _load_config(args.config)
    if "sensing_var_sets" not in data:
        raise ValidationError("entropy-report config needs 'sensing_var_sets'")
    prior_var = float(data.get("prior_var", 1.0))
    rows = []
    for idx, sv in enumerate(data["sensing_var_sets"]):
        rep = entropy.entropy_report(prior_var, sv)
        rows.append([idx, " ".join(_fmt(v) for v in sv),
                     _fmt(rep.h_ml), _fmt(rep.h_mmse)])
    _write_csv(args.output, ["index", "sensing_vars", "h_ml", "h_mmse"], rows)
    return 0


def _compare_setup(data, seed_override):
    config = _experiment_config(data, seed_override)
    prior = pipeline.load_prior(config)
    sensing_vars = (np.asarray(config.sensing_vars, dtype=np.float64)
                    if config.sensing_vars is not None else
                    pipeline.target_sensing_vars(
                        prior, config.num_devices, config.sensing_snr_db,
                        np.random.SeedSequence(
                            config.seed, spawn_key=(pipeline._DOM_SENSING, 0)),
                        spread=config.sensing_spread))
    cal = pipeline.calibrate(
        prior, sensing_vars, config.estimator, config.calibration_samples,
        np.random.SeedSequence(
            config.seed, spawn_key=(pipeline._DOM_CALIBRATION, 0)),
        responsibility_noise_var=config.responsibility_noise_var,
    )
    delta = discriminative_prior(prior).delta
    return config, prior, cal, delta


def _cmd_tdm_compare(args) -> int:
    """Per-slot MSE and MD of the two TDM solvers, averaged over seeded
    channel draws per communication SNR.  Estimate variances are pooled
    across devices and dimensions (the MD closed form requires device
    homogeneity)."""
    data = _load_config(args.config)
    config, prior, cal, delta = _compare_setup(data, args.seed)
    K = config.num_devices
    sv_pooled = float(cal.sigma_hat.mean())
    nu_slot = cal.nu2.mean(axis=1)
    delta_slot = float(delta.mean())
    rows = []
    for v_idx, snr_db in enumerate(config.comm_snr_db):
        budget = config.noise_var * 10.0 ** (snr_db / 10.0)
        sums = np.zeros(4)
        for i in range(config.trials):
            rng = np.random.default_rng(np.random.SeedSequence(
                config.seed, spawn_key=(_DOM_COMPARE, v_idx, i)))
            gains = rng.rayleigh(scale=np.sqrt(0.5), size=K)
            inst = solvers.TdmInstance(
                gains=gains, budgets=np.full(K, budget), moments=nu_slot,
                est_vars=np.full(K, sv_pooled), noise_var=config.noise_var,
                delta=delta_slot)
            rep_mse = solvers.tdm_mse_optimal(inst)
            rep_md = solvers.tdm_md_optimal(inst)
            sums += [rep_mse.objective, solvers.design_md(inst, rep_mse.design),
                     solvers.design_mse(inst, rep_md.design), rep_md.objective]
        means = sums / config.trials
        rows.append([_fmt(snr_db), _fmt(means[0]), _fmt(means[1]),
                     _fmt(means[2]), _fmt(means[3])])
    _write_csv(args.output,
               ["comm_snr_db", "mse_comp", "md_comp", "mse_dec", "md_dec"],
               rows)
    return 0


def _cmd_fdm_compare(args) -> int:
    """MSE and MD of the two FDM designs plus the baselines, averaged over
    seeded channel draws per communication SNR."""
    data = _load_config(args.config)
    config, prior, cal, delta = _compare_setup(data, args.seed)
    K, M = config.num_devices, config.feature_dim
    T = config.trials
    opts = solvers.DualOptions(max_iters=0)
    header = ["comm_snr_db"]
    for tag in ("comp", "dec", "equal", "inv"):
        header += [f"mse_{tag}", f"md_{tag}"]
    rows = []
    for v_idx, snr_db in enumerate(config.comm_snr_db):
        budget = config.noise_var * 10.0 ** (snr_db / 10.0)
        gains = np.empty((T, K, M))
        for i in range(T):
            rng = np.random.default_rng(np.random.SeedSequence(
                config.seed, spawn_key=(_DOM_COMPARE, v_idx, i)))
            gains[i] = rng.rayleigh(scale=np.sqrt(0.5), size=(K, M))
        budgets = np.full((T, K), budget)
        moments = np.broadcast_to(cal.nu2, (T, K, M)).copy()
        est_vars = np.broadcast_to(cal.sigma_hat, (T, K, M)).copy()
        noise = np.full(T, config.noise_var)
        deltas = np.broadcast_to(delta, (T, M)).copy()
        core = solvers._DualCore(gains, budgets, moments, est_vars, noise, deltas)

        def metrics(tx, rx):
            hb = gains * tx
            mis = rx[:, None, :] * hb - 1.0
            mse = np.sum(mis * mis * est_vars, axis=(1, 2)) \
                + np.sum(rx * rx, axis=1) * config.noise_var
            num = deltas * np.sum(hb, axis=1) ** 2
            den = np.sum(hb * hb * est_vars, axis=1) + config.noise_var
            md = np.sum(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0),
                        axis=1)
            return float(mse.mean()), float(md.mean())

        row = [_fmt(snr_db)]
        _, aux, b, _, _ = core.run("mse", opts, use_stop_rule=False)
        row += [_fmt(v) for v in metrics(b, aux)]
        _, _, b, _, _ = core.run("md", opts, use_stop_rule=False)
        row += [_fmt(v) for v in metrics(
            b, pipeline._rx_mse_batch(gains, est_vars, noise[:, None], b))]
        tx = np.sqrt(budgets[:, :, None] / (M * moments))
        row += [_fmt(v) for v in metrics(
            tx, pipeline._rx_mse_batch(gains, est_vars, noise[:, None], tx))]
        tx = np.minimum(np.sqrt(budgets[:, :, None] / (M * moments)), 1.0 / gains)
        row += [_fmt(v) for v in metrics(
            tx, pipeline._rx_mse_batch(gains, est_vars, noise[:, None], tx))]
        rows.append(row)
    _write_csv(args.output, header, rows)
    return 0


def _cmd_accuracy_sweep(args) -> int:
    data = _load_config(args.config)
    variable = data.get("sweep_variable", "comm_snr")
    values = data.get("sweep_values")
    config = _experiment_config(data, args.seed)
    records = pipeline.sweep(config, variable, values)
    pipeline.export(records, args.output)
    return 0


def _cmd_validate_solvers(args) -> int:
    data = _load_config(args.config) if args.config else {}
    n_inst = int(data.get("instances", 20))
    seed = int(args.seed if args.seed is not None else data.get("seed", 0))
    checks = solvers.oracle_validation_suite(n_inst, seed)
    failed = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        failed += 0 if ok else 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="iseasim", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("estimator-sweep", _cmd_estimator_sweep, True),
        ("entropy-report", _cmd_entropy_report, True),
        ("tdm-compare", _cmd_tdm_compare, True),
        ("fdm-compare", _cmd_fdm_compare, True),
        ("accuracy-sweep", _cmd_accuracy_sweep, True),
        ("validate-solvers", _cmd_validate_solvers, False),
    ]
    for name, fn, needs_output in specs:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "validate-solvers",
                       help="path to the JSON config")
        if needs_output:
            p.add_argument("--output", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
