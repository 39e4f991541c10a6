"""Command line harness: model generation, exact marginals, proposal
training, and scored sampler experiments.

Every command is a pure function of its config file, flags, and seeds:
rerunning with identical inputs reproduces all outputs byte for byte except
wall-clock columns in CSVs and timing fields in JSON reports. Errors exit
nonzero with a `error: <file or field>: <what>` diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .gmm import (
    GmmError,
    GmmSpec,
    NeuralPairProposal,
    circle_clusters,
    init_state,
    load_observations,
    run_baseline,
    run_neural,
    save_observations,
    trace_to_csv,
)
from .mdn import MdnSpecError, OptimizerHyperparams, load_params
from .metrics import build_eval_report, report_to_json
from .models import ModelError, sample_prior
from .motifs import MOTIF_NAMES, InstantiationDistribution, get_motif
from .motifs import sample_chain_model, sample_grid_model
from .neural_sampler import (
    ProposalLibrary,
    build_schedule,
    estimate_marginals,
    run_inference,
)
from .oracle import (
    enumerate_marginals,
    marginals_to_csv,
    marginals_to_mar,
    parse_mar,
    variable_elimination_marginals,
)
from .samplers import TraceWriter, chain_rng
from .training import (
    TrainJob,
    evaluate_kl,
    kl_summary,
    loss_curve_to_csv,
    motif_config,
    train_proposal,
)
from .uai import (
    UaiParseError,
    parse_uai,
    parse_uai_evidence,
    serialize_uai,
    serialize_uai_evidence,
)


class CliError(Exception):
    """User-facing failure: bad flag combination, file, or config field."""


# ---------------------------------------------------------------------------
# Small file and config helpers


def _read_text(path: str) -> str:
    try:
        with open(path, "r") as fh:
            return fh.read()
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from None


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from None


def _load_json_object(path: str) -> dict:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise CliError(f"{path}: top level must be a JSON object")
    return doc


_TRAIN_DEFAULTS: dict = {
    "motif": None,  # required: one of MOTIF_NAMES
    "steps": 1000,
    "batch_size": 256,
    "lr": 1e-3,
    "optimizer": "adam",
    "seed": 0,
    "hidden": None,  # [h1, h2]; null uses the default sizing rule
    "p_determ": 0.05,
    "alpha": [0.5, 0.5],
    "host_shape": [6, 6],
    "chain_length": 9,
    "eval_every": 0,
    "eval_instantiations": 200,
    "eval_seed": None,
}


def _materialize_train_config(path: str, doc: dict) -> dict:
    unknown = sorted(set(doc) - set(_TRAIN_DEFAULTS))
    if unknown:
        raise CliError(f"{path}: unknown config field(s): {', '.join(unknown)}")
    cfg = {**_TRAIN_DEFAULTS, **doc}
    if not isinstance(cfg["motif"], str):
        raise CliError(f"{path}: field 'motif': expected one of {MOTIF_NAMES}")
    if cfg["motif"] not in MOTIF_NAMES:
        raise CliError(f"{path}: field 'motif': {cfg['motif']!r} is not one of {MOTIF_NAMES}")
    for key in ("steps", "batch_size", "seed", "eval_every", "eval_instantiations"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise CliError(f"{path}: field {key!r}: expected an integer")
    for key in ("lr", "p_determ"):
        if not isinstance(cfg[key], (int, float)) or isinstance(cfg[key], bool):
            raise CliError(f"{path}: field {key!r}: expected a number")
        cfg[key] = float(cfg[key])
    for key, length in (("alpha", 2), ("host_shape", 2)):
        v = cfg[key]
        if not (isinstance(v, list) and len(v) == length):
            raise CliError(f"{path}: field {key!r}: expected a list of {length} numbers")
    if cfg["hidden"] is not None:
        v = cfg["hidden"]
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(h, int) for h in v)):
            raise CliError(f"{path}: field 'hidden': expected null or [h1, h2]")
    if not isinstance(cfg["chain_length"], int):
        raise CliError(f"{path}: field 'chain_length': expected an integer")
    if cfg["eval_seed"] is not None and not isinstance(cfg["eval_seed"], int):
        raise CliError(f"{path}: field 'eval_seed': expected null or an integer")
    if cfg["optimizer"] not in ("adam", "sgd"):
        raise CliError(f"{path}: field 'optimizer': expected 'adam' or 'sgd'")
    return cfg


# ---------------------------------------------------------------------------
# gen-model


def _cmd_gen_model(args: argparse.Namespace) -> int:
    rng = chain_rng(args.seed, 0)
    if args.kind == "gmm":
        x, _ = circle_clusters(
            args.points, args.clusters, args.radius, rng, noise_var=args.noise_var
        )
        save_observations(args.out, x)
        print(f"wrote {args.points} observations ({args.clusters} clusters) -> {args.out}")
        return 0

    if args.kind == "grid":
        model = sample_grid_model(
            args.rows, args.cols, rng, p_determ=args.p_determ, alpha=tuple(args.alpha)
        )
    else:
        model = sample_chain_model(args.length, args.cardinality, rng)
    _write_text(args.out, serialize_uai(model))
    print(f"wrote {args.kind} model with {model.num_vars} variables -> {args.out}")

    if args.evidence_count:
        if args.evidence_count >= model.num_vars:
            raise CliError("evidence must leave at least one latent variable")
        if args.evidence_out is None:
            raise CliError("--evidence-count needs --evidence-out")
        if model.kind == "directed":
            full = sample_prior(model, rng)
        else:
            # random tables here are strictly positive, so any values work
            full = np.array([rng.integers(c) for c in model.cards])
        chosen = np.sort(rng.choice(model.num_vars, size=args.evidence_count, replace=False))
        evidence = {int(v): int(full[v]) for v in chosen}
        _write_text(args.evidence_out, serialize_uai_evidence(evidence))
        print(f"wrote {len(evidence)} evidence values -> {args.evidence_out}")
    return 0


# ---------------------------------------------------------------------------
# oracle


def _load_model_and_evidence(args: argparse.Namespace):
    model = parse_uai(_read_text(args.model))
    evidence = parse_uai_evidence(_read_text(args.evidence)) if args.evidence else {}
    return model, evidence


def _cmd_oracle(args: argparse.Namespace) -> int:
    if not (args.out_mar or args.out_csv):
        raise CliError("oracle needs --out-mar and/or --out-csv")
    model, evidence = _load_model_and_evidence(args)
    if args.method == "enum":
        marginals = enumerate_marginals(model, evidence)
    else:
        marginals = variable_elimination_marginals(model, evidence)
    if args.out_mar:
        _write_text(args.out_mar, marginals_to_mar(marginals))
    if args.out_csv:
        _write_text(args.out_csv, marginals_to_csv(marginals))
    wrote = " and ".join(p for p in (args.out_mar, args.out_csv) if p)
    print(f"exact marginals ({args.method}) for {model.num_vars} variables -> {wrote}")
    return 0


# ---------------------------------------------------------------------------
# train


def _distribution_for(cfg: dict) -> InstantiationDistribution:
    motif = get_motif(cfg["motif"])
    if motif.kind == "grid":
        return InstantiationDistribution(
            motif,
            p_determ=cfg["p_determ"],
            dirichlet_alpha=tuple(cfg["alpha"]),
            host_shape=tuple(cfg["host_shape"]),
        )
    if motif.kind == "chain":
        return InstantiationDistribution(motif, chain_length=cfg["chain_length"])
    return InstantiationDistribution(motif)  # gmm-pair: generator is built in


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _materialize_train_config(args.config, _load_json_object(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    os.makedirs(args.out, exist_ok=True)
    try:
        dist = _distribution_for(cfg)
        motif = dist.motif
        config = motif_config(
            motif, None if cfg["hidden"] is None else tuple(cfg["hidden"])
        )
        hyper = OptimizerHyperparams(
            lr=cfg["lr"],
            batch_size=cfg["batch_size"],
            steps=cfg["steps"],
            optimizer=cfg["optimizer"],
        )
        job = TrainJob(
            motif_name=motif.name,
            dist=dist,
            config=config,
            hyper=hyper,
            seed=cfg["seed"],
            steps=cfg["steps"],
            eval_every=cfg["eval_every"],
            eval_instantiations=cfg["eval_instantiations"],
            eval_seed=cfg["eval_seed"],
            out_path=os.path.join(args.out, "params.npz"),
        )
    except (ValueError, MdnSpecError) as e:
        raise CliError(f"{args.config}: {e}") from None

    params, report = train_proposal(job)
    body = dataclasses.asdict(report)
    body["config"] = cfg
    _write_text(
        os.path.join(args.out, "train_report.json"),
        json.dumps(body, indent=2, sort_keys=True) + "\n",
    )
    _write_text(os.path.join(args.out, "loss_curve.csv"), loss_curve_to_csv(report))
    last = report.loss_curve[-1][1] if report.loss_curve else float("nan")
    print(
        f"trained {motif.name} for {cfg['steps']} steps "
        f"(final nll {last:.4f}) -> {job.out_path}"
    )
    if report.kl_summary is not None:
        print(f"held-out KL: {json.dumps(report.kl_summary, sort_keys=True)}")
    return 0


# ---------------------------------------------------------------------------
# eval-kl


def _cmd_eval_kl(args: argparse.Namespace) -> int:
    config, params, tag, metadata = load_params(args.params)
    metadata = metadata or {}
    motif_name = args.motif or metadata.get("motif")
    if motif_name is None:
        raise CliError(f"{args.params}: no motif recorded; pass --motif")
    try:
        motif = get_motif(motif_name)
    except KeyError as e:
        raise CliError(str(e.args[0])) from None
    if motif.encoding_tag != tag:
        raise CliError(
            f"{args.params}: encoding tag {tag!r} does not match motif "
            f"{motif_name!r} ({motif.encoding_tag!r})"
        )
    def _flag_or_meta(flag, key, default):
        if flag is not None:
            return flag
        stored = metadata.get(key)
        return default if stored is None else stored

    cfg = {
        "motif": motif_name,
        "p_determ": _flag_or_meta(args.p_determ, "p_determ", 0.05),
        "alpha": list(_flag_or_meta(args.alpha, "dirichlet_alpha", [0.5, 0.5])),
        "host_shape": list(_flag_or_meta(args.host_shape, "host_shape", [6, 6])),
        "chain_length": _flag_or_meta(args.chain_length, "chain_length", 9),
    }
    if motif.kind == "grid":
        dist = InstantiationDistribution(
            motif,
            p_determ=cfg["p_determ"],
            dirichlet_alpha=tuple(cfg["alpha"]),
            host_shape=tuple(cfg["host_shape"]),
        )
    elif motif.kind == "chain":
        dist = InstantiationDistribution(motif, chain_length=cfg["chain_length"])
    else:
        raise CliError("eval-kl needs a discrete motif (grid or chain)")
    kls = evaluate_kl(config, params, dist, args.instantiations, seed=args.seed)
    lines = ["instantiation,kl"]
    lines += [f"{i},{kl:.17g}" for i, kl in enumerate(kls)]
    _write_text(args.out, "\n".join(lines) + "\n")
    summary = kl_summary(kls)
    if args.summary_out:
        _write_text(args.summary_out, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# sample


_SAMPLERS = ("gibbs", "block-exact", "neural", "mixed")
_DEFAULT_MIX = {"gibbs": 0.0, "block-exact": 1.0, "neural": 1.0, "mixed": 0.5}


def _cmd_sample(args: argparse.Namespace) -> int:
    model, evidence = _load_model_and_evidence(args)
    library = ProposalLibrary()
    if args.sampler != "gibbs":
        if not args.params:
            raise CliError(f"sampler {args.sampler!r} needs at least one --params file")
        for path in args.params:
            library.add_from_file(path)
    mix_ratio = _DEFAULT_MIX[args.sampler] if args.mix_ratio is None else args.mix_ratio
    motif_names = args.motif if args.motif else None
    if args.sampler == "gibbs":
        schedule = build_schedule(model, evidence, library, motif_names=(), mix_ratio=0.0)
    else:
        schedule = build_schedule(
            model, evidence, library, motif_names=motif_names, mix_ratio=mix_ratio
        )
    block_mode = "exact" if args.sampler == "block-exact" else "neural"

    os.makedirs(args.out, exist_ok=True)
    config_echo = {
        "command": "sample",
        "model": args.model,
        "evidence": args.evidence,
        "truth": args.truth,
        "sampler": args.sampler,
        "params": list(args.params or ()),
        "motifs": list(motif_names or ()) or None,
        "epochs": args.epochs,
        "seed": args.seed,
        "stream": args.stream,
        "mix_ratio": mix_ratio,
        "checkpoint_every": args.checkpoint_every,
        "burn_in": args.burn_in,
        "wall_cap_secs": args.wall_cap_secs,
        "neural_blocks": schedule.n_neural,
    }
    trace_path = os.path.join(args.out, "trace.csv")
    with open(trace_path, "w") as fh:
        trace = run_inference(
            model,
            evidence,
            library,
            schedule=schedule,
            epochs=args.epochs,
            seed=args.seed,
            stream=args.stream,
            checkpoint_every=args.checkpoint_every,
            trace_writer=TraceWriter(fh),
            wall_cap_s=args.wall_cap_secs,
            block_mode=block_mode,
        )
    est = estimate_marginals(trace, burn_in=args.burn_in)
    _write_text(os.path.join(args.out, "marginals.MAR"), marginals_to_mar(est))
    _write_text(os.path.join(args.out, "marginals.csv"), marginals_to_csv(est))
    truth = parse_mar(_read_text(args.truth)) if args.truth else None
    report = build_eval_report(
        trace, truth, args.sampler, config=config_echo, seed=args.seed, stream=args.stream
    )
    _write_text(os.path.join(args.out, "report.json"), report_to_json(report))
    rates = ", ".join(
        f"{kind} {summary['accepted']}/{summary['proposed']}"
        for kind, summary in report.acceptance.items()
        if summary["proposed"]
    )
    line = f"ran {trace.epochs_run} epochs ({rates or 'no moves'})"
    if report.final_error is not None:
        line += f"; final {report.error_metric} {report.final_error:.5f}"
    print(line + f" -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# gmm


def _cmd_gmm(args: argparse.Namespace) -> int:
    x = load_observations(args.data)
    spec = GmmSpec(
        m=args.m, n=x.shape[0], d=2, sigma2_mu=args.sigma2_mu, sigma2=args.sigma2
    )
    rng = chain_rng(args.seed, args.stream)
    state = init_state(spec, x, rng, m_active=args.init_m)
    if args.sampler == "neural":
        if not args.params:
            raise CliError("gmm --sampler neural needs --params")
        proposal = NeuralPairProposal.from_file(args.params)
        state, rows, accepts = run_neural(spec, state, proposal, x, rng, args.steps)
        extra = f", accepted {accepts}/{args.steps}"
    else:
        state, rows = run_baseline(spec, state, x, rng, args.steps)
        extra = ""
    _write_text(args.out, trace_to_csv(rows))
    ms = [m for _, m, _ in rows]
    changes = sum(a != b for a, b in zip(ms, ms[1:]))
    print(
        f"{args.sampler}: {args.steps} steps, M visited {sorted(set(ms))}, "
        f"{changes} M changes{extra} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuralblock",
        description="Neural block proposals for MCMC: generate, train, sample, score.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write a random model (or GMM dataset)")
    p.add_argument("--kind", choices=("grid", "chain", "gmm"), required=True)
    p.add_argument("--rows", type=int, default=6)
    p.add_argument("--cols", type=int, default=6)
    p.add_argument("--p-determ", type=float, default=0.05)
    p.add_argument("--alpha", type=float, nargs=2, default=[0.5, 0.5])
    p.add_argument("--length", type=int, default=9)
    p.add_argument("--cardinality", type=int, default=2)
    p.add_argument("--points", type=int, default=60)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--noise-var", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--evidence-count", type=int, default=0)
    p.add_argument("--evidence-out")
    p.set_defaults(func=_cmd_gen_model)

    p = sub.add_parser("oracle", help="exact posterior marginals to .MAR/.csv")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence")
    p.add_argument("--method", choices=("ve", "enum"), default="ve")
    p.add_argument("--out-mar")
    p.add_argument("--out-csv")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("train", help="meta-train a motif proposal from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-kl", help="held-out KL histogram for trained parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--motif", default=None)
    p.add_argument("--instantiations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-determ", type=float, default=None)
    p.add_argument("--alpha", type=float, nargs=2, default=None)
    p.add_argument("--host-shape", type=int, nargs=2, default=None)
    p.add_argument("--chain-length", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--summary-out")
    p.set_defaults(func=_cmd_eval_kl)

    p = sub.add_parser("sample", help="run one chain and score it against truth")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence")
    p.add_argument("--truth", help=".MAR file of exact marginals to score against")
    p.add_argument("--sampler", choices=_SAMPLERS, required=True)
    p.add_argument("--params", action="append", default=[])
    p.add_argument("--motif", action="append", default=[],
                   help="restrict/ordering of motifs used for block detection")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--mix-ratio", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--burn-in", type=float, default=0.5)
    p.add_argument("--wall-cap-secs", type=float, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("gmm", help="open-universe mixture chain; traces active M")
    p.add_argument("--data", required=True, help="observations CSV (one x,y per line)")
    p.add_argument("--sampler", choices=("neural", "gibbs"), required=True)
    p.add_argument("--params")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--sigma2", type=float, default=0.1)
    p.add_argument("--sigma2-mu", type=float, default=4.0)
    p.add_argument("--init-m", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gmm)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (UaiParseError, ModelError, GmmError, MdnSpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
