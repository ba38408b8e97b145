"""Command-line pipeline driver.

One subcommand per stage (synth, match, stylize, filter, train, eval,
sweep) plus `pipeline`, which composes them end to end and compares the
trained adapter against the zero-shot baseline (and in-style against
mixed scheduling when more than one style is present).

Logs are line-oriented key=value on stderr; machine-readable results go
to stdout or files. Exit codes: 0 success, 1 runtime failure, 2
usage/config error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluator, matcher, styler, synthgen, trainer
from .embedcore import load_embeddings, save_embeddings
from .errors import ConfigInvalid, StylePairError
from .synthgen import SynthConfig, dataset_paths

log = logging.getLogger("stylepair")

DEFAULT_SWEEP_GRID = "0.26,0.27,0.28,0.29,0.30"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with defaults; explicit flags win")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--threads", type=int, default=0,
                        help="worker cap, 0 = available parallelism")
    parser.add_argument("--deterministic", action="store_true",
                        help="recorded in logs; outputs are reproducible regardless")


def _add_synth_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--styles", type=int, default=2)
    parser.add_argument("--queries-per-style", type=int, default=512)
    parser.add_argument("--pool-size", type=int, default=8192)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--content-dim", type=int, default=16)
    parser.add_argument("--style-strength", type=float, default=0.8)
    parser.add_argument("--cross-modal-noise", type=float, default=0.1)
    parser.add_argument("--held-out-fraction", type=float, default=0.25)


def _add_train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--learning-rate", type=float, default=0.3)
    parser.add_argument("--momentum", type=float, default=0.9)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--tau", type=float, default=trainer.DEFAULT_TAU)
    # stale queue negatives (no momentum encoder here) cost recall; off by default
    parser.add_argument("--queue-capacity", type=int, default=0)


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    """Assemble the CLI; `defaults` (from --config) seed every subcommand.

    Subparsers parse into a fresh namespace, so config-file defaults must
    be installed on each of them, not just the root parser.
    """
    parser = argparse.ArgumentParser(
        prog="stylepair",
        description="Build styled text-video pairs from unpaired text and train retrieval adapters",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    created = []

    def add_parser(*args, **kwargs):
        p = sub.add_parser(*args, **kwargs)
        created.append(p)
        return p

    p = add_parser("synth", help="generate the seeded synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    _add_synth_options(p)
    _add_common(p)

    p = add_parser("match", help="exclusive pseudo-matching of queries to pool clips")
    p.add_argument("--queries", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True, help="pseudo-pair JSONL path")
    p.add_argument("--order", choices=[matcher.ORDER_QUERY_ID, matcher.ORDER_GLOBAL_GREEDY],
                   default=matcher.ORDER_QUERY_ID)
    p.add_argument("--shortlist-k", type=int, default=matcher.DEFAULT_SHORTLIST_K)
    _add_common(p)

    p = add_parser("stylize", help="fit the style map and caption the whole pool")
    p.add_argument("--queries", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--pairs", required=True, help="pseudo-pair JSONL from `match`")
    p.add_argument("--style-out", required=True, help="style transform output path")
    p.add_argument("--styled-out", required=True, help="styled caption embeddings path")
    p.add_argument("--ridge-lambda", type=float, default=styler.DEFAULT_RIDGE_LAMBDA)
    p.add_argument("--noise-sigma", type=float, default=styler.DEFAULT_NOISE_SIGMA)
    p.add_argument("--tag", default="")
    _add_common(p)

    p = add_parser("filter", help="keep styled captions similar to their own clip")
    p.add_argument("--styled", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True, help="generated-pair JSONL path")
    p.add_argument("--threshold", type=float, default=styler.DEFAULT_THRESHOLD)
    _add_common(p)

    p = add_parser("sweep", help="retention counts over a threshold grid")
    p.add_argument("--styled", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--thresholds", default=DEFAULT_SWEEP_GRID,
                   help="comma-separated ascending thresholds")
    p.add_argument("--out", help="optional JSON output path")
    _add_common(p)

    p = add_parser("train", help="train adapter heads on generated pairs")
    p.add_argument("--pool", required=True)
    p.add_argument("--styled", action="append", required=True,
                   help="styled caption embeddings, once per style")
    p.add_argument("--pairs", action="append", required=True,
                   help="generated-pair JSONL, once per style (same order)")
    p.add_argument("--out", required=True, help="adapter output path")
    p.add_argument("--loss-log", help="optional CSV loss log path")
    p.add_argument("--mode", choices=[trainer.MODE_IN_STYLE, trainer.MODE_MIXED],
                   default=trainer.MODE_IN_STYLE)
    _add_train_options(p)
    _add_common(p)

    p = add_parser("eval", help="recall and median-rank retrieval report")
    p.add_argument("--captions", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--adapter")
    p.add_argument("--zero-shot", action="store_true",
                   help="ignore any adapter and use raw cosine")
    p.add_argument("--out", help="optional JSON output path")
    p.add_argument("--no-ranks", action="store_true", help="omit per-query ranks")
    p.add_argument("--ranks-csv", help="optional per-query rank CSV path")
    _add_common(p)

    p = add_parser("pipeline", help="run every stage end to end and compare")
    p.add_argument("--workdir", required=True)
    p.add_argument("--data-dir", help="reuse an existing dataset directory")
    p.add_argument("--threshold", type=float, default=styler.DEFAULT_THRESHOLD)
    p.add_argument("--order", choices=[matcher.ORDER_QUERY_ID, matcher.ORDER_GLOBAL_GREEDY],
                   default=matcher.ORDER_QUERY_ID)
    p.add_argument("--shortlist-k", type=int, default=matcher.DEFAULT_SHORTLIST_K)
    p.add_argument("--ridge-lambda", type=float, default=styler.DEFAULT_RIDGE_LAMBDA)
    p.add_argument("--noise-sigma", type=float, default=styler.DEFAULT_NOISE_SIGMA)
    _add_synth_options(p)
    _add_train_options(p)
    _add_common(p)

    if defaults:
        for target in created:
            target.set_defaults(**defaults)
    return parser


def _threads(args) -> int:
    if args.threads and args.threads > 0:
        return args.threads
    return os.cpu_count() or 1


def _validate_knobs(args) -> None:
    th = getattr(args, "threshold", None)
    if th is not None and not -1.0 < th < 1.0:
        raise ConfigInvalid(f"threshold {th} must lie strictly in (-1, 1)")
    tau = getattr(args, "tau", None)
    if tau is not None and tau <= 0.0:
        raise ConfigInvalid(f"tau {tau} must be positive")
    batch = getattr(args, "batch_size", None)
    if batch is not None and batch < 2:
        raise ConfigInvalid(f"batch_size {batch} must be at least 2")


def _synth_config(args) -> SynthConfig:
    return SynthConfig(
        n_styles=args.styles,
        queries_per_style=args.queries_per_style,
        pool_size=args.pool_size,
        dim=args.dim,
        content_dim=args.content_dim,
        style_strength=args.style_strength,
        cross_modal_noise=args.cross_modal_noise,
        seed=args.seed,
        held_out_fraction=args.held_out_fraction,
    )


def cmd_synth(args) -> int:
    cfg = _synth_config(args)
    ds = synthgen.generate(cfg)
    paths = synthgen.write_dataset(ds, args.out)
    log.info("stage=synth styles=%d queries_per_style=%d pool=%d seed=%d",
             cfg.n_styles, cfg.queries_per_style, cfg.pool_size, cfg.seed)
    for key in ("queries", "test_captions"):
        for path in paths[key]:
            log.info("stage=synth wrote=%s", os.path.basename(path))
    for key in ("pool", "test_clips", "truth", "latent"):
        log.info("stage=synth wrote=%s", os.path.basename(paths[key]))
    return 0


def cmd_match(args) -> int:
    queries = load_embeddings(args.queries)
    pool = load_embeddings(args.pool)
    pairs = matcher.match_exclusive(
        queries, pool, order=args.order,
        shortlist_k=args.shortlist_k, threads=_threads(args),
    )
    pairs.query_set = os.path.basename(args.queries)
    pairs.clip_set = os.path.basename(args.pool)
    matcher.write_pseudo_pairs(pairs, args.out)
    log.info("stage=match pairs=%d mean_sim=%.4f policy=%s",
             len(pairs), float(pairs.sims.mean()), args.order)
    return 0


def cmd_stylize(args) -> int:
    queries = load_embeddings(args.queries)
    pool = load_embeddings(args.pool)
    pairs = matcher.read_pseudo_pairs(args.pairs)
    style = styler.fit_style(
        pairs, queries, pool,
        ridge_lambda=args.ridge_lambda,
        noise_sigma=args.noise_sigma,
        style_tag=args.tag,
    )
    styler.save_style(style, args.style_out)
    styled = styler.generate_styled(pool, style, seed=args.seed, threads=_threads(args))
    save_embeddings(styled, args.styled_out)
    log.info("stage=stylize tag=%s styled=%d", args.tag, styled.count)
    return 0


def cmd_filter(args) -> int:
    styled = load_embeddings(args.styled)
    pool = load_embeddings(args.pool)
    gen = styler.filter_pairs(styled, pool, args.threshold)
    if len(gen) == 0:
        log.warning("stage=filter warning=empty_generated_pair_set threshold=%g",
                    args.threshold)
    styler.write_generated_pairs(gen, args.out)
    return 0


def cmd_sweep(args) -> int:
    styled = load_embeddings(args.styled)
    pool = load_embeddings(args.pool)
    grid = [float(v) for v in args.thresholds.split(",") if v.strip()]
    rows = styler.threshold_sweep(styled, pool, grid)
    payload = {"rows": [{"threshold": r.threshold, "kept": r.kept, "rate": r.rate}
                        for r in rows]}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def _load_style_sets(pair_paths, styled_paths):
    if len(pair_paths) != len(styled_paths):
        raise ConfigInvalid("--pairs and --styled must be given once per style, in order")
    gen_sets, styled_sets = [], []
    for i, (pp, sp) in enumerate(zip(pair_paths, styled_paths)):
        gen = styler.read_generated_pairs(pp)
        if not gen.style_tag:
            gen.style_tag = f"style{i}"
        gen_sets.append(gen)
        styled_sets.append(load_embeddings(sp))
    return gen_sets, styled_sets


def cmd_train(args) -> int:
    pool = load_embeddings(args.pool)
    gen_sets, styled_sets = _load_style_sets(args.pairs, args.styled)
    texts, videos = trainer.build_training_arrays(gen_sets, styled_sets, pool)
    model = trainer.init_adapter(dim=pool.dim, tau=args.tau)
    config = trainer.TrainConfig(
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        queue_capacity=args.queue_capacity,
    )
    model, rows = trainer.train_epochs(
        model, gen_sets, texts, videos,
        mode=args.mode, epochs=args.epochs,
        batch_size=args.batch_size, config=config, seed=args.seed,
    )
    trainer.save_adapter(model, args.out)
    if args.loss_log:
        trainer.write_loss_log(rows, args.loss_log)
    log.info("stage=train mode=%s steps=%d first_loss=%.6f last_loss=%.6f",
             args.mode, len(rows), rows[0].loss if rows else float("nan"),
             rows[-1].loss if rows else float("nan"))
    return 0


def cmd_eval(args) -> int:
    captions = load_embeddings(args.captions)
    candidates = load_embeddings(args.candidates)
    truth = synthgen.read_truth(args.truth)
    model = None
    if args.adapter and not args.zero_shot:
        model = trainer.load_adapter(args.adapter)
    ranks = evaluator.rank_queries(captions, candidates, truth,
                                   model=model, threads=_threads(args))
    rep = evaluator.report(ranks)
    text = json.dumps(rep.to_dict(include_ranks=not args.no_ranks),
                      indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    if args.ranks_csv:
        evaluator.write_ranks_csv(rep, args.ranks_csv)
    print(text)
    return 0


def _mean_section(reports: list[evaluator.RetrievalReport]) -> dict:
    return {
        "per_style": [r.to_dict(include_ranks=False) for r in reports],
        "mean_r1": float(np.mean([r.r1 for r in reports])),
        "mean_r5": float(np.mean([r.r5 for r in reports])),
        "mean_r10": float(np.mean([r.r10 for r in reports])),
        "mean_median_rank": float(np.mean([r.median_rank for r in reports])),
    }


def run_pipeline(args) -> dict:
    """Synthesize (or reuse) a dataset, run all stages, return the report."""
    workdir = args.workdir
    os.makedirs(workdir, exist_ok=True)
    threads = _threads(args)
    cfg = _synth_config(args)

    if args.data_dir:
        data_dir = args.data_dir
        paths = dataset_paths(data_dir, cfg.n_styles)
    else:
        data_dir = os.path.join(workdir, "data")
        paths = dataset_paths(data_dir, cfg.n_styles)
        if not os.path.exists(paths["truth"]):
            synthgen.write_dataset(synthgen.generate(cfg), data_dir)
            log.info("stage=pipeline synthesized=%s", os.path.basename(data_dir))

    pool = load_embeddings(paths["pool"])
    test_clips = load_embeddings(paths["test_clips"])
    truth = synthgen.read_truth(paths["truth"])
    queries = [load_embeddings(p) for p in paths["queries"]]
    test_captions = [load_embeddings(p) for p in paths["test_captions"]]

    zero_shot = [
        evaluator.report(evaluator.rank_queries(tc, test_clips, truth, threads=threads))
        for tc in test_captions
    ]

    gen_sets, styled_sets, pseudo_counts = [], [], []
    for s in range(cfg.n_styles):
        tag = f"style{s}"
        pseudo = matcher.match_exclusive(
            queries[s], pool, order=args.order,
            shortlist_k=args.shortlist_k, threads=threads,
        )
        pseudo.query_set = f"queries_{tag}"
        pseudo.clip_set = "pool"
        matcher.write_pseudo_pairs(pseudo, os.path.join(workdir, f"pseudo_pairs_{tag}.jsonl"))
        pseudo_counts.append(len(pseudo))

        style = styler.fit_style(
            pseudo, queries[s], pool,
            ridge_lambda=args.ridge_lambda, noise_sigma=args.noise_sigma,
            style_tag=tag,
        )
        styler.save_style(style, os.path.join(workdir, f"style_{tag}.iemb"))
        styled = styler.generate_styled(pool, style, seed=args.seed, threads=threads)
        save_embeddings(styled, os.path.join(workdir, f"styled_{tag}.iemb"))

        gen = styler.filter_pairs(styled, pool, args.threshold)
        gen.style_tag = tag
        if len(gen) == 0:
            log.warning("stage=pipeline warning=empty_generated_pair_set style=%s", tag)
        styler.write_generated_pairs(gen, os.path.join(workdir, f"generated_pairs_{tag}.jsonl"))
        gen_sets.append(gen)
        styled_sets.append(styled)

    texts, videos = trainer.build_training_arrays(gen_sets, styled_sets, pool)
    train_config = trainer.TrainConfig(
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        queue_capacity=args.queue_capacity,
    )

    def run_mode(mode: str) -> dict:
        model = trainer.init_adapter(dim=pool.dim, tau=args.tau)
        model, rows = trainer.train_epochs(
            model, gen_sets, texts, videos,
            mode=mode, epochs=args.epochs,
            batch_size=args.batch_size, config=train_config, seed=args.seed,
        )
        trainer.save_adapter(model, os.path.join(workdir, f"adapter_{mode}.iemb"))
        trainer.write_loss_log(rows, os.path.join(workdir, f"loss_{mode}.csv"))
        reports = [
            evaluator.report(
                evaluator.rank_queries(tc, test_clips, truth, model=model, threads=threads))
            for tc in test_captions
        ]
        section = _mean_section(reports)
        section["steps"] = len(rows)
        section["final_loss"] = rows[-1].loss if rows else None
        return section

    report = {
        "config": {
            "n_styles": cfg.n_styles,
            "queries_per_style": cfg.queries_per_style,
            "pool_size": cfg.pool_size,
            "dim": cfg.dim,
            "content_dim": cfg.content_dim,
            "style_strength": cfg.style_strength,
            "cross_modal_noise": cfg.cross_modal_noise,
            "held_out_fraction": cfg.held_out_fraction,
            "seed": args.seed,
            "threshold": args.threshold,
            "tau": args.tau,
            "batch_size": args.batch_size,
            "learning_rate": args.learning_rate,
            "momentum": args.momentum,
            "epochs": args.epochs,
            "queue_capacity": args.queue_capacity,
            "match_order": args.order,
        },
        "pair_counts": {
            "pseudo": pseudo_counts,
            "generated": [len(g) for g in gen_sets],
        },
        "zero_shot": _mean_section(zero_shot),
        "in_style": run_mode(trainer.MODE_IN_STYLE),
    }
    if cfg.n_styles > 1:
        report["mixed"] = run_mode(trainer.MODE_MIXED)
    return report


def cmd_pipeline(args) -> int:
    report = run_pipeline(args)
    text = json.dumps(report, indent=2, sort_keys=True)
    with open(os.path.join(args.workdir, "report.json"), "w", encoding="utf-8") as f:
        f.write(text + "\n")
    print(text)
    log.info("stage=pipeline zero_shot_r1=%.2f in_style_r1=%.2f",
             report["zero_shot"]["mean_r1"], report["in_style"]["mean_r1"])
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "match": cmd_match,
    "stylize": cmd_stylize,
    "filter": cmd_filter,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def _config_defaults(argv) -> dict:
    """Pre-scan for --config so its values become parser defaults."""
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
        else:
            continue
        with open(path, "r", encoding="utf-8") as f:
            try:
                values = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"{path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigInvalid(f"{path}: config must be a JSON object")
        return values
    return {}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        parser = build_parser(defaults=_config_defaults(argv))
        args = parser.parse_args(argv)
        _validate_knobs(args)
        if args.deterministic:
            log.info("flag=deterministic note=outputs_reproducible_by_construction")
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        log.error("error=MissingInput detail=%s", exc)
        return 2
    except ConfigInvalid as exc:
        log.error("error=ConfigInvalid detail=%s", exc)
        return 2
    except (StylePairError, ValueError, KeyError) as exc:
        log.error("error=%s detail=%s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
