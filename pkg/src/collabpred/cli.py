"""Experiment harness: config-driven runs, data generation, verification.

Exit codes: 0 success, 2 config/validation failure, 3 verification failure.
Every run is seeded and writes byte-identical artifacts when repeated with
the same config. Set COLLAB_LOG=DEBUG|INFO|WARNING to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import datagen
from .batch import (
    BatchModelTranscript,
    BatchSample,
    LsqOracle,
    collaborate,
    eval_test_points,
    final_swap_regret,
)
from .bayes import PriorTable, expected_conversation_swap_regret, run_bayes_protocol
from .core import (
    ALICE,
    BOB,
    BucketingSpec,
    ConversationTranscript,
    conversation_swap_regret,
    disagreement_fraction,
    ece,
    sqe,
)
from .decisions import (
    BaselineForecaster,
    DecisionTask,
    PolicySet,
    decision_cal_error,
    decision_cross_cal_error,
    decision_swap_regret,
    run_decision_protocol,
)
from .learners import ConversationWrapper, LinearClassSpec
from .protocol import (
    ConstantLearner,
    ProtocolConfig,
    SoloVawLearner,
    agreement_profile,
    final_regret_report,
    round_error_profile,
    run_collaboration,
    run_solo,
)
from .verify import run_all as run_verify_checks

log = logging.getLogger("collabpred")


class ConfigError(ValueError):
    pass


def _setup_logging():
    level = os.environ.get("COLLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _check_fields(cfg: dict, required: set, optional: set, where: str):
    for f in required:
        if f not in cfg:
            raise ConfigError(f"{where}: missing required field '{f}'")
    for f in cfg:
        if f not in required and f not in optional:
            raise ConfigError(f"{where}: unknown field '{f}'")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_dataset(spec: dict, seed: int, days: Optional[int] = None):
    if "path" in spec:
        _check_fields(spec, {"path"}, set(), "dataset")
        with open(spec["path"]) as fh:
            return datagen.dataset_from_json(json.load(fh))
    _check_fields(spec, {"generator"}, {"days", "params"}, "dataset")
    name = spec["generator"]
    gen = datagen.GENERATORS.get(name)
    if gen is None:
        raise ConfigError(f"dataset: unknown generator '{name}'")
    params = dict(spec.get("params", {}))
    T = int(spec.get("days", days if days is not None else 1000))
    return gen(T, seed, **params)


def _build_learner(cfg: dict, d: int, where: str):
    _check_fields(cfg, {"kind"}, {"d", "C", "a", "m", "g", "value"}, where)
    kind = cfg["kind"]
    d = int(cfg.get("d", d))
    a = float(cfg.get("a", 1.0))
    if kind == "constant":
        return ConstantLearner(float(cfg.get("value", 0.5)))
    if kind == "vaw":
        return SoloVawLearner(d, a)
    if kind == "swap":
        from .protocol import SwapLearner

        return SwapLearner(d, a, int(cfg.get("m", 10)))
    if kind == "conversation":
        return ConversationWrapper(
            d=d, C=float(cfg.get("C", 1.0)), a=a,
            m=int(cfg.get("m", 10)), g=float(cfg.get("g", 0.1)),
        )
    raise ConfigError(f"{where}: unknown learner kind '{kind}'")


def _write_metrics_csv(path: str, transcript: ConversationTranscript, eps: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "sqe", "ece", f"disagreement@{eps}"])
        for k in range(1, transcript.K + 1):
            preds = transcript.round_predictions(k)
            dis = "" if k == 1 else repr(disagreement_fraction(transcript, k, eps))
            w.writerow([k, repr(sqe(preds, transcript.outcomes)),
                        repr(ece(preds, transcript.outcomes)), dis])


def run_online(cfg: dict) -> int:
    _check_fields(
        cfg,
        {"mode", "seed", "days", "rounds", "eps", "dataset", "alice", "bob"},
        {"bucketing", "out", "transcript", "csv", "solo_baselines", "C"},
        "online config",
    )
    seed = int(cfg["seed"])
    dataset = _load_dataset(dict(cfg["dataset"]), seed, days=int(cfg["days"]))
    d_a = dataset.examples[0].x_a.shape[0]
    d_b = dataset.examples[0].x_b.shape[0]
    pcfg = ProtocolConfig(K=int(cfg["rounds"]), eps=float(cfg["eps"]), seed=seed)
    alice = _build_learner(dict(cfg["alice"]), d_a, "alice")
    bob = _build_learner(dict(cfg["bob"]), d_b, "bob")
    bucket_cfg = cfg.get("bucketing", {})
    _check_fields(bucket_cfg, set(), {"g", "m"}, "bucketing")
    bucketing = BucketingSpec(g=float(bucket_cfg.get("g", 0.1)), m=int(bucket_cfg.get("m", 10)))
    C = float(cfg.get("C", 1.0))

    transcript = run_collaboration(dataset, alice, bob, pcfg)
    spec_a = LinearClassSpec(d=d_a, C=C, with_intercept=True)
    spec_b = LinearClassSpec(d=d_b, C=C, with_intercept=True)
    report = final_regret_report(transcript, dataset, spec_a, spec_b, bucketing, pcfg.eps)
    payload = report.to_json_dict()
    profile = agreement_profile(transcript, pcfg.eps, bucketing)
    errors = round_error_profile(transcript, bucketing)
    payload["agreement"] = {
        "fractions": {str(k): v for k, v in profile.fractions.items()},
        "k_star": profile.k_star,
        "bound": profile.bound,
        "beta_hat": profile.beta_hat,
    }
    payload["round_errors"] = {
        "sqe": {str(k): v for k, v in errors.sqe_by_round.items()},
        "max_adjacent_increase": errors.max_adjacent_increase,
        "flagged_rounds": list(errors.flagged_rounds),
    }
    if cfg.get("solo_baselines"):
        payload["solo_sqe"] = {
            "alice": run_solo(dataset, ALICE, d_a),
            "bob": run_solo(dataset, BOB, d_b),
        }
    if "transcript" in cfg:
        with open(cfg["transcript"], "w") as fh:
            fh.write(transcript.to_text())
    if "csv" in cfg:
        _write_metrics_csv(cfg["csv"], transcript, pcfg.eps)
    if "out" in cfg:
        _write_json(cfg["out"], payload)
    log.info("online run complete: final sqe %.4f", report.sqe)
    return 0


def run_batch(cfg: dict) -> int:
    _check_fields(
        cfg,
        {"mode", "seed", "m", "data"},
        {"C", "out", "out_model_a", "out_model_b", "n", "params"},
        "batch config",
    )
    seed = int(cfg["seed"])
    m = int(cfg["m"])
    C = float(cfg.get("C", 1.0))
    data_cfg = cfg["data"]
    if isinstance(data_cfg, str):
        with open(data_cfg) as fh:
            sample = BatchSample.from_json_dict(json.load(fh))
    else:
        _check_fields(data_cfg, set(), {"n", "params"}, "batch data")
        params = dict(data_cfg.get("params", {}))
        sample = datagen.additive_batch_sample(int(data_cfg.get("n", 1000)), seed, **params)
    spec_a = LinearClassSpec(d=sample.x_a.shape[1], C=C, with_intercept=True)
    spec_b = LinearClassSpec(d=sample.x_b.shape[1], C=C, with_intercept=True)
    result = collaborate(sample, LsqOracle(spec_a), LsqOracle(spec_b), m)
    if "out_model_a" in cfg:
        result.transcript_a.save(cfg["out_model_a"])
    if "out_model_b" in cfg:
        result.transcript_b.save(cfg["out_model_b"])
    if "out" in cfg:
        final = result.final_values
        _write_json(cfg["out"], {
            "rounds": result.rounds,
            "train_sqe_mean": float(np.mean((final - sample.y) ** 2)),
            "swap_regret_union": final_swap_regret(final, sample, spec_a, spec_b),
        })
    log.info("batch training halted after %d rounds", result.rounds)
    return 0


def run_decision(cfg: dict) -> int:
    _check_fields(
        cfg,
        {"mode", "seed", "days", "rounds", "task"},
        {"dataset", "out", "policies"},
        "decision config",
    )
    seed = int(cfg["seed"])
    task = DecisionTask.from_json_dict(cfg["task"])
    dataset_cfg = cfg.get("dataset", {"generator": "decision-iid", "params": {"d": task.d}})
    dataset = _load_dataset(dict(dataset_cfg), seed, days=int(cfg["days"]))
    K = int(cfg["rounds"])
    alice = BaselineForecaster(task.d)
    bob = BaselineForecaster(task.d)
    transcript = run_decision_protocol(dataset, task, alice, bob, K)
    final = transcript.round(K)
    named = {}
    if "policies" in cfg:
        # policy file: {"policies": {name: [action per row index]}}
        with open(cfg["policies"]) as fh:
            named = {
                name: np.asarray(labels, dtype=int)
                for name, labels in json.load(fh)["policies"].items()
            }
    policies = PolicySet(task.n_actions, transcript.T, named=named)
    _per_action, cal = decision_cal_error(final, task)
    _per_triple, cross = decision_cross_cal_error(final, task, policies)
    swap = decision_swap_regret(final, task, policies)
    if "out" in cfg:
        _write_json(cfg["out"], {
            "decision_cal_error": cal,
            "decision_cross_cal_error": cross,
            "decision_swap_regret": swap,
            "bound": task.lipschitz * task.n_actions * cal
            + task.lipschitz * task.n_actions**2 * cross,
        })
    return 0


def _load_prior(spec, seed: int) -> PriorTable:
    if isinstance(spec, str):
        if spec == "xor":
            return datagen.xor_prior()
        if spec == "additive":
            return datagen.additive_prior()
        raise ConfigError(f"prior: unknown named prior '{spec}'")
    _check_fields(spec, set(), {"path", "rho"}, "prior")
    if "path" in spec:
        with open(spec["path"]) as fh:
            return PriorTable.from_json_dict(json.load(fh))
    if "rho" in spec:
        return datagen.rho_prior(float(spec["rho"]))
    raise ConfigError("prior: expected a name, a path, or a rho value")


def run_bayes(cfg: dict) -> int:
    _check_fields(
        cfg,
        {"mode", "seed", "rounds", "m", "prior"},
        {"out", "eps"},
        "bayes config",
    )
    prior = _load_prior(cfg["prior"], int(cfg["seed"]))
    K = int(cfg["rounds"])
    m = int(cfg["m"])
    res = run_bayes_protocol(prior, K, m, eps=float(cfg.get("eps", 0.1)))
    csr = {}
    for side in (ALICE, BOB):
        entries = expected_conversation_swap_regret(prior, K, m, side)
        csr.update({f"{side}:{k},{i}": v for (k, i), v in entries.items()})
    if "out" in cfg:
        _write_json(cfg["out"], {
            "expected_sqe_by_round": {str(k): v for k, v in res.expected_sqe_by_round.items()},
            "disagreement_mass_by_round": {
                str(k): v for k, v in res.disagreement_mass_by_round.items()
            },
            "joint_benchmark_error": res.joint_benchmark_error,
            "full_information_risk": res.full_information_risk,
            "expected_conversation_swap_regret": csr,
            "swap_regret_cap": 1.0 / (m * m),
        })
    return 0


def run_config(path: str, overrides: Optional[dict] = None) -> int:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        print(f"error: config file not found: {path}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: config is not valid JSON: {e}", file=sys.stderr)
        return 2
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    mode = cfg.get("mode")
    runners = {
        "online": run_online,
        "batch": run_batch,
        "decision": run_decision,
        "bayes": run_bayes,
    }
    try:
        if mode == "verify":
            return 0 if run_verify_checks() else 3
        if mode not in runners:
            raise ConfigError(f"config: unknown or missing mode '{mode}'")
        return runners[mode](cfg)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def cmd_run(args) -> int:
    overrides = {
        "days": args.days,
        "rounds": args.rounds,
        "eps": args.eps,
        "seed": args.seed,
        "out": args.out,
        "transcript": args.transcript,
    }
    if len(args.config) == 1:
        return run_config(args.config[0], overrides)
    # several configs share one invocation via a process-internal work pool;
    # each run stays single-threaded and owns its own output files
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=min(4, len(args.config))) as pool:
        codes = list(pool.map(lambda p: run_config(p, overrides), args.config))
    return max(codes)


def cmd_gen_data(args) -> int:
    seed = args.seed
    try:
        if args.generator == "prior":
            if args.prior_name in ("xor", "additive"):
                prior = {"xor": datagen.xor_prior, "additive": datagen.additive_prior}[args.prior_name]()
            elif args.prior_name == "rho":
                prior = datagen.rho_prior(args.rho)
            elif args.prior_name == "custom":
                if not args.atoms:
                    raise ConfigError("custom prior requires --atoms FILE")
                with open(args.atoms) as fh:
                    prior = datagen.encode_prior(json.load(fh))
            else:
                raise ConfigError(f"unknown prior name '{args.prior_name}'")
            _write_json(args.out, prior.to_json_dict())
            return 0
        if args.generator == "batch-additive":
            sample = datagen.additive_batch_sample(args.days, seed)
            _write_json(args.out, sample.to_json_dict())
            return 0
        gen = datagen.GENERATORS.get(args.generator)
        if gen is None:
            raise ConfigError(f"unknown generator '{args.generator}'")
        params = json.loads(args.params) if args.params else {}
        dataset = gen(args.days, seed, **params)
        _write_json(args.out, datagen.dataset_to_json(dataset))
        return 0
    except (ConfigError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def cmd_verify(_args) -> int:
    return 0 if run_verify_checks() else 3


def cmd_report(args) -> int:
    try:
        with open(args.transcript) as fh:
            transcript = ConversationTranscript.from_text(fh.read())
    except FileNotFoundError:
        print(f"error: transcript file not found: {args.transcript}", file=sys.stderr)
        return 2
    bucketing = BucketingSpec(g=args.g, m=args.m)
    payload = {
        "T": transcript.T,
        "K": transcript.K,
        "sqe_by_round": {
            str(k): sqe(transcript.round_predictions(k), transcript.outcomes)
            for k in range(1, transcript.K + 1)
        },
        "ece_by_round": {
            str(k): ece(transcript.round_predictions(k), transcript.outcomes)
            for k in range(1, transcript.K + 1)
        },
        "disagreement_by_round": {
            str(k): disagreement_fraction(transcript, k, args.eps)
            for k in range(2, transcript.K + 1)
        },
        "conversation_swap_regret_constant": {
            f"{side}:{k},{i}": v
            for side in (ALICE, BOB)
            for (k, i), v in conversation_swap_regret(
                transcript, side, "constant", bucketing
            ).items()
        },
    }
    if args.out:
        _write_json(args.out, payload)
    if args.csv:
        _write_metrics_csv(args.csv, transcript, args.eps)
    return 0


def cmd_train(args) -> int:
    cfg = {
        "mode": "batch",
        "seed": args.seed,
        "m": args.m,
        "C": args.C,
        "data": args.data,
        "out_model_a": args.out[0],
        "out_model_b": args.out[1],
    }
    try:
        return run_batch(cfg)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def cmd_eval(args) -> int:
    try:
        ta = BatchModelTranscript.load(args.models[0])
        tb = BatchModelTranscript.load(args.models[1])
        with open(args.points) as fh:
            sample = BatchSample.from_json_dict(json.load(fh))
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    preds = eval_test_points(sample, ta, tb)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "prediction"])
        for i, v in enumerate(preds):
            w.writerow([i, repr(float(v))])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one or more config-driven experiments")
    run_p.add_argument("--config", required=True, nargs="+")
    run_p.add_argument("--days", type=int)
    run_p.add_argument("--rounds", type=int)
    run_p.add_argument("--eps", type=float)
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--out")
    run_p.add_argument("--transcript")
    run_p.set_defaults(fn=cmd_run)

    gen_p = sub.add_parser("gen-data", help="write a seeded dataset or prior file")
    gen_p.add_argument("--generator", required=True,
                       help="additive-linear-noise | d-rho | xor | swap-necessity | "
                            "decision-iid | batch-additive | prior")
    gen_p.add_argument("--days", type=int, default=1000)
    gen_p.add_argument("--seed", type=int, required=True)
    gen_p.add_argument("--out", required=True)
    gen_p.add_argument("--params", help="JSON object of generator parameters")
    gen_p.add_argument("--prior-name", default="xor",
                       help="xor | additive | rho | custom (with --atoms)")
    gen_p.add_argument("--rho", type=float, default=2.0)
    gen_p.add_argument("--atoms", help="atoms JSON for --prior-name custom")
    gen_p.set_defaults(fn=cmd_gen_data)

    ver_p = sub.add_parser("verify", help="run every counterexample and property check")
    ver_p.set_defaults(fn=cmd_verify)

    rep_p = sub.add_parser("report", help="recompute metrics from a stored transcript")
    rep_p.add_argument("--transcript", required=True)
    rep_p.add_argument("--out")
    rep_p.add_argument("--csv")
    rep_p.add_argument("--eps", type=float, default=0.2)
    rep_p.add_argument("--g", type=float, default=0.1)
    rep_p.add_argument("--m", type=int, default=10)
    rep_p.set_defaults(fn=cmd_report)

    train_p = sub.add_parser("train", help="batch collaboration training")
    train_p.add_argument("--m", type=int, required=True)
    train_p.add_argument("--data", required=True)
    train_p.add_argument("--out", nargs=2, required=True, metavar=("MODEL_A", "MODEL_B"))
    train_p.add_argument("--C", type=float, default=1.0)
    train_p.add_argument("--seed", type=int, default=0)
    train_p.set_defaults(fn=cmd_train)

    eval_p = sub.add_parser("eval", help="replay trained batch models on new points")
    eval_p.add_argument("--models", nargs=2, required=True, metavar=("MODEL_A", "MODEL_B"))
    eval_p.add_argument("--points", required=True)
    eval_p.add_argument("--out", required=True)
    eval_p.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
