"""Command-line entry point: ``latphish <command> [flags]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from importlib import resources

from . import __version__
from . import characterize as ch
from . import forest as rf
from . import pipeline, syngen, textsim
from .corpus import CorpusError, CorpusIndex, from_ts, load_orgs, month_bounds, parse_month, parse_timestamp, read_corpus
from .features import FeatureContext, KeywordList
from .urlrep import DomainRanking, SpecialDomainLists, load_shortlinks

log = logging.getLogger("latphish")

DATA_ERRORS = (CorpusError, ValueError, OSError, KeyError, rf.TrainingError, syngen.GenConfigError)


# -- run manifest ----------------------------------------------------------------


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_manifest(args, inputs, outputs) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "run_manifest")}
    return {
        "command": args.command,
        "config_hash": hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest(),
        "parameters": params,
        "inputs": {p: _digest(p) for p in inputs if p and os.path.isfile(p)},
        "seed": getattr(args, "seed", None),
        "outputs": [p for p in outputs if p],
        "version": __version__,
    }


def write_run_manifest(args, inputs, outputs):
    rec = run_manifest(args, inputs, outputs)
    target = args.run_manifest or (outputs[0] + ".run.json" if outputs and outputs[0] else None)
    if target is None:
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- shared loaders --------------------------------------------------------------


def _load_index(args) -> CorpusIndex:
    orgs = load_orgs(args.orgs)
    emails, errors = read_corpus(args.corpus, orgs)
    if errors:
        raise CorpusError(errors)
    return CorpusIndex(emails, orgs)


def _load_context(args, index) -> FeatureContext:
    lists = SpecialDomainLists.load(args.shorteners, args.content_hosts, args.freemail)
    ranking = DomainRanking.load(args.ranking)
    keywords = KeywordList.load(args.keywords) if args.keywords else KeywordList.default()
    shortlinks = load_shortlinks(args.shortlinks) if args.shortlinks else {}
    return FeatureContext(index, ranking, lists, keywords, shortlinks)


def _context_inputs(args):
    return [args.corpus, args.orgs, args.ranking, args.keywords, args.shortlinks,
            args.shorteners, args.content_hosts, args.freemail]


def _train_config(args) -> rf.TrainConfig:
    cfg = rf.TrainConfig()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            rec = json.load(fh)
        cfg = rf.TrainConfig(**{k: v for k, v in rec.items() if k != "rng_seed"})
    return cfg.replace(rng_seed=args.seed)


def _reported_before(index: CorpusIndex, end_ts: int):
    return [e for e in index.emails_between(index.time_range[0], end_ts)
            if index.is_employee_sent(e) and e.user_reported_phish and e.manual_label != "benign"]


def _previous_month_templates(index, context, start_ts):
    s = from_ts(start_ts)
    prev = (s.year - 1, 12) if s.month == 1 else (s.year, s.month - 1)
    p_start, _ = month_bounds(*prev)
    return textsim.mine_templates(index.emails_between(p_start, start_ts), context.ranking, context.lists)


# -- commands --------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.gen_config:
        with open(args.gen_config, encoding="utf-8") as fh:
            rec = json.load(fh)
    else:
        rec = {}
    for key, value in (("n_orgs", args.orgs), ("n_mailboxes", args.mailboxes), ("months", args.months),
                       ("start_month", args.start_month), ("n_attack_campaigns", args.campaigns)):
        if value is not None:
            rec[key] = value
    rec["seed"] = args.seed
    config = syngen.GenConfig.from_record(rec)
    result = syngen.generate(config)
    paths = syngen.write_outputs(result, args.out)
    print(f"wrote {len(result.emails)} emails, {len(result.orgs)} orgs, {len(result.campaigns)} campaigns to {args.out}")
    write_run_manifest(args, [args.gen_config], [paths["corpus.jsonl"], *sorted(paths.values())])
    return 0


def cmd_validate(args) -> int:
    orgs = load_orgs(args.orgs)
    emails, errors = read_corpus(args.corpus, orgs)
    for err in errors:
        print(str(err))
    print(f"{len(emails)} valid records, {len(errors)} rejected")
    write_run_manifest(args, [args.corpus, args.orgs], [])
    return 1 if errors else 0


def cmd_train(args) -> int:
    index = _load_index(args)
    context = _load_context(args, index)
    config = _train_config(args)
    grid = None
    if args.grid_search:
        grid = rf.DEFAULT_GRID
        if args.grid:
            with open(args.grid, encoding="utf-8") as fh:
                grid = json.load(fh)
    model, config = pipeline.train_on_window(index, context, args.window, config, args.threads, grid)
    rf.save_model(model, args.out_model)
    print(f"trained {len(model.trees)} trees (depth {config.max_depth}, min_leaf {config.min_leaf}, "
          f"ratio {config.downsample_ratio}) -> {args.out_model}")
    for name, imp in model.importance_map().items():
        print(f"  {name:22s} {imp:.4f}")
    write_run_manifest(args, [*_context_inputs(args), args.config, args.grid], [args.out_model])
    return 0


def cmd_detect(args) -> int:
    index = _load_index(args)
    context = _load_context(args, index)
    model = rf.load_model(args.model)
    start, end = pipeline.parse_window(args.window)
    known = None if args.no_fuzzy else _reported_before(index, end)
    if args.no_templates:
        templates = []
    elif args.templates:
        templates = textsim.load_templates(args.templates)
    else:
        templates = _previous_month_templates(index, context, start)
    incidents = pipeline.detect_window(index, context, model, (start, end), known, templates)
    pipeline.write_alerts(incidents, args.out_alerts)
    print(f"{len(incidents)} alert incidents -> {args.out_alerts}")
    write_run_manifest(args, [*_context_inputs(args), args.model, args.templates], [args.out_alerts])
    return 0


def cmd_eval(args) -> int:
    index = _load_index(args)
    context = _load_context(args, index)
    config = _train_config(args)
    audit = pipeline.LeakageAudit() if args.audit else None
    result = pipeline.run_continuous_learning(
        index, context, args.train_window, args.test_window, config, monthly=args.monthly,
        use_fuzzy=not args.no_fuzzy, use_templates=not args.no_templates, audit=audit,
        n_jobs=args.threads, score_train=args.score_train)
    record = result.to_record()
    if audit is not None:
        record["audit"] = {"violations": audit.violations, "pool_checks": audit.pool_checks,
                           "history_checks": audit.history_checks}
    if args.manifest:
        campaigns, _, _ = syngen.read_manifest(args.manifest)
        test_start, test_end = pipeline.parse_window(args.test_window)
        keys = [(c["account"], c["subject"]) for c in campaigns
                if test_start <= int(parse_timestamp(c["first_sent_at"]).timestamp()) < test_end]
        record["manifest_recall"] = result.recall_against(keys)
        record["manifest_incidents"] = len(keys)
    outputs = []
    if args.out_report:
        with open(args.out_report, "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append(args.out_report)
    if args.out_alerts:
        pipeline.write_alerts([i for i in result.incidents if i.detected], args.out_alerts)
        outputs.append(args.out_alerts)
    columns = {}
    if result.train_report is not None:
        columns["train"] = result.train_report
    columns["test"] = result.report
    if args.monthly and len(result.monthly) > 1:
        columns.update(result.monthly)
    print(pipeline.format_report_table(columns))
    if "manifest_recall" in record:
        print(f"\nincident recall against manifest: {100 * record['manifest_recall']:.1f}% "
              f"of {record['manifest_incidents']}")
    if audit is not None:
        print(f"leakage audit: {len(audit.violations)} violations over "
              f"{audit.pool_checks} pool and {audit.history_checks} history checks")
    write_run_manifest(args, [*_context_inputs(args), args.config, args.manifest], outputs)
    return 1 if audit is not None and audit.violations else 0


def cmd_mine_templates(args) -> int:
    index = _load_index(args)
    context = _load_context(args, index)
    start, end = month_bounds(*parse_month(args.month))
    templates = textsim.mine_templates(index.emails_between(start, end), context.ranking, context.lists)
    textsim.save_templates(templates, args.out_templates)
    print(f"{len(templates)} templates from {args.month} -> {args.out_templates}")
    for t in templates:
        print(f"  {t.sender_domain:24s} {','.join(t.domain_group) or '-':32s} {t.representative_email_id}")
    write_run_manifest(args, _context_inputs(args), [args.out_templates])
    return 0


def cmd_characterize(args) -> int:
    orgs = load_orgs(args.orgs)
    emails, errors = read_corpus(args.corpus, orgs)
    if errors:
        raise CorpusError(errors)
    index = CorpusIndex(emails, orgs)
    incidents = pipeline.read_alerts(args.alerts)
    dictionary = ch.load_dictionary(args.dictionary) if args.dictionary else None
    report = ch.characterize(index, incidents, dictionary, top_words=args.top_words)
    ch.write_report(report, args.out_report)
    print(f"{report['n_incidents']} attack incidents from {report['n_atos']} accounts -> {args.out_report}")
    for s, n in report["strategies"].items():
        print(f"  {s:22s} {n}")
    print(f"  success links: {len(report['success_links'])}")
    write_run_manifest(args, [args.corpus, args.orgs, args.alerts, args.dictionary], [args.out_report])
    return 0


def _reference_counts_path():
    return resources.files("latphish.data") / "reference_counts.json"


def cmd_metrics(args) -> int:
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            rec = json.load(fh)
        columns = {"test": pipeline.EvalReport.from_record(rec["aggregate"])}
        if rec.get("train"):
            columns = {"train": pipeline.EvalReport.from_record(rec["train"]), **columns}
    else:
        if args.counts:
            with open(args.counts, encoding="utf-8") as fh:
                rec = json.load(fh)
        else:
            rec = json.loads(_reference_counts_path().read_text(encoding="utf-8"))
        columns = {name: pipeline.metrics_from_counts(**counts) for name, counts in rec.items()}
    print(pipeline.format_report_table(columns))
    write_run_manifest(args, [args.counts, args.report], [])
    return 0


# -- parser ----------------------------------------------------------------------


def _add_context_flags(p, window=None):
    p.add_argument("--corpus", required=True, help="line-delimited email records")
    p.add_argument("--orgs", required=True, help="line-delimited org records")
    p.add_argument("--ranking", required=True, help="'rank,domain' popularity list")
    p.add_argument("--keywords", help="phishy keyword list (default: bundled)")
    p.add_argument("--shortlinks", help="offline short-link map, tab separated")
    p.add_argument("--shorteners", help="shortener domain list (default: bundled)")
    p.add_argument("--content-hosts", dest="content_hosts", help="content-hosting domain list (default: bundled)")
    p.add_argument("--freemail", help="freemail domain list (default: bundled)")


def _add_common(p, seed=True, threads=False):
    if seed:
        p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    if threads:
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker cap; results do not depend on it (default: all cores)")
    p.add_argument("--run-manifest", dest="run_manifest", help="where to write the run manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latphish", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--orgs", type=int, help="number of organizations")
    p.add_argument("--mailboxes", type=int, help="total employee mailboxes")
    p.add_argument("--months", type=int, help="calendar months to generate")
    p.add_argument("--start-month", dest="start_month", help="first month, YYYY-MM")
    p.add_argument("--campaigns", type=int, help="injected attack incidents")
    p.add_argument("--gen-config", dest="gen_config", help="JSON generator config; flags override it")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="lint a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--orgs", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="fit the forest on one window")
    _add_context_flags(p)
    p.add_argument("--window", required=True, help="START/END, END exclusive (YYYY-MM, YYYY-MM-DD or RFC 3339)")
    p.add_argument("--config", help="JSON TrainConfig fields")
    p.add_argument("--grid-search", dest="grid_search", action="store_true", help="choose hyperparameters by 3-fold CV")
    p.add_argument("--grid", help="JSON grid for --grid-search (default: full grid)")
    p.add_argument("--out-model", dest="out_model", required=True)
    _add_common(p, threads=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score one window with a saved model")
    _add_context_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--window", required=True, help="START/END, END exclusive")
    p.add_argument("--templates", help="template store (default: mine the previous month)")
    p.add_argument("--no-templates", dest="no_templates", action="store_true")
    p.add_argument("--no-fuzzy", dest="no_fuzzy", action="store_true")
    p.add_argument("--out-alerts", dest="out_alerts", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="temporal split plus monthly continuous learning")
    _add_context_flags(p)
    p.add_argument("--train-window", dest="train_window", required=True)
    p.add_argument("--test-window", dest="test_window", required=True)
    p.add_argument("--monthly", action=argparse.BooleanOptionalAction, default=True,
                   help="retrain at each month boundary (default on)")
    p.add_argument("--config", help="JSON TrainConfig fields")
    p.add_argument("--no-templates", dest="no_templates", action="store_true")
    p.add_argument("--no-fuzzy", dest="no_fuzzy", action="store_true")
    p.add_argument("--score-train", dest="score_train", action="store_true", help="also report the training window")
    p.add_argument("--audit", action="store_true", help="check for time leakage; violations exit 1")
    p.add_argument("--manifest", help="generator manifest, to report recall over injected incidents")
    p.add_argument("--out-report", dest="out_report")
    p.add_argument("--out-alerts", dest="out_alerts")
    _add_common(p, threads=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mine-templates", help="mine popular-mail templates from one month")
    _add_context_flags(p)
    p.add_argument("--month", required=True, help="YYYY-MM")
    p.add_argument("--out-templates", dest="out_templates", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_mine_templates)

    p = sub.add_parser("characterize", help="attacker analytics over confirmed alert incidents")
    p.add_argument("--corpus", required=True)
    p.add_argument("--orgs", required=True)
    p.add_argument("--alerts", required=True, help="alert incidents from detect or eval")
    p.add_argument("--dictionary", help="common-word list (default: bundled)")
    p.add_argument("--top-words", dest="top_words", type=int, default=20)
    p.add_argument("--out-report", dest="out_report", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("metrics", help="print the detection summary table")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--counts", help="JSON {window: raw counts} (default: bundled reference counts)")
    src.add_argument("--report", help="report written by eval --out-report")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"latphish {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
