"""Command-line entry point: offline training, evaluation, simulation, serving."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..clustering import ClusteringError
from ..core import (EncodingError, LogFormatError, SchemaError, default_schema_path,
                    default_vocab_path, load_schema, load_vocab, parse_review_log,
                    write_review_log)
from ..eval.metrics import MetricError, report_from_counts
from ..eval.synthetic import ScenarioError
from ..pipeline import TrainConfig, parse_k_range, train_pipeline
from ..profiles import (ArtifactError, ProfileError, describe_cups, format_cups, load_artifact,
                        save_artifact)
from ..ranker import RankerError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
LISTEN_ENV = "CUPRANK_LISTEN"

DATA_ERRORS = (SchemaError, EncodingError, LogFormatError, ArtifactError, ProfileError,
               ClusteringError, RankerError, MetricError, ScenarioError, OSError,
               json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, stage: str, message: str) -> int:
    print(json.dumps({"error": message, "stage": stage, "exit": code}), file=sys.stderr)
    return code


def _write_report_files(report, report_dir: Path, training=None, artifact=None):
    from .. import plotting
    report_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if report is not None:
        (report_dir / "metrics.json").write_text(report.to_json() + "\n")
        (report_dir / "metrics.csv").write_text(report.to_csv())
        written += ["metrics.json", "metrics.csv"]
        plotting.plot_metrics(report, report_dir / "metrics.png")
        written.append("metrics.png")
    if training is not None:
        plotting.plot_silhouette(training.silhouette, report_dir / "silhouette.png")
        written.append("silhouette.png")
    if artifact is not None:
        plotting.plot_cup_weights(artifact, report_dir / "cup_weights.png")
        written.append("cup_weights.png")
    return written


def cmd_train(args) -> int:
    schema = load_schema(args.schema)
    vocab = load_vocab(args.vocab)
    with open(args.log, encoding="utf-8") as fh:
        reviews, stats = parse_review_log(fh, schema, vocab, strict=args.strict)
    k_min, k_max = parse_k_range(args.k_range)
    config = TrainConfig(k_min=k_min, k_max=k_max, seed=args.seed, restarts=args.restarts,
                         threshold=args.threshold, alpha=args.alpha,
                         min_support=args.min_support, sample_cap=args.sample_cap,
                         uniform_prior=args.uniform_prior,
                         endorsement_scale=args.endorsement_scale)
    result = train_pipeline(reviews, schema, vocab, config)
    save_artifact(result.artifact, args.out)
    summary = {"artifact": str(args.out), "ingest": stats.to_dict(),
               "chosen_k": result.silhouette.chosen_k, "cups": len(result.artifact.cups),
               "contextual_rankers": len(result.artifact.rankers.per_cup)}
    if args.report_dir:
        summary["figures"] = _write_report_files(None, Path(args.report_dir), training=result,
                                                 artifact=result.artifact)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_inspect(args) -> int:
    artifact = load_artifact(args.model)
    profiles = describe_cups(artifact)
    if args.json:
        print(json.dumps({"profiles": profiles, "summary": artifact.summary},
                         indent=2, sort_keys=True))
    else:
        print(format_cups(profiles), end="")
    return EXIT_OK


def _emit_report(report, args, training=None, artifact=None):
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    print()
    print(report.to_table(), end="")
    if args.report_dir:
        _write_report_files(report, Path(args.report_dir), training, artifact)


def cmd_evaluate(args) -> int:
    path = Path(args.counts)
    if path.suffix == ".csv":
        import csv
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [{k: (float(v) if k == "conversion" else v) for k, v in r.items() if v != ""}
                    for r in csv.DictReader(fh)]
    else:
        data = json.loads(path.read_text(encoding="utf-8"))
        rows = data["arms"] if isinstance(data, dict) else data
    report = report_from_counts(rows, baseline=args.baseline)
    _emit_report(report, args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from ..eval.scenario import load_scenario, run_scenario
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    training = None
    if args.model:
        from ..pipeline import TrainResult
        artifact = load_artifact(args.model)
        training = TrainResult(artifact, None, None, None)
    run = run_scenario(scenario, arms, training=training)
    if args.save_model and not args.model:
        save_artifact(run.training.artifact, args.save_model)
    _emit_report(run.report, args, training=run.training if not args.model else None,
                 artifact=run.training.artifact)
    return EXIT_OK


def cmd_generate(args) -> int:
    from ..eval.scenario import load_scenario
    from ..eval.synthetic import generate
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    reviews, truth = generate(scenario.workload, scenario.schema, scenario.vocab)
    with open(args.out, "w", encoding="utf-8") as fh:
        n = write_review_log(reviews, fh)
    if args.truth:
        Path(args.truth).write_text(truth.to_json() + "\n")
    print(json.dumps({"reviews": n, "log": str(args.out)}))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import RankingService, make_server, parse_listen
    host, port = parse_listen(args.listen or os.environ.get(LISTEN_ENV, "127.0.0.1:8080"))
    service = RankingService(strict=not args.lenient)
    if args.model:
        service.load(args.model)
    server = make_server(service, host, port)
    logging.getLogger(__name__).info("listening on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cuprank", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="review log -> model artifact")
    t.add_argument("--log", required=True)
    t.add_argument("--schema", default=str(default_schema_path()))
    t.add_argument("--vocab", default=str(default_vocab_path()))
    t.add_argument("--k-range", default="2..30")
    t.add_argument("--threshold", type=float, default=0.2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--restarts", type=int, default=8)
    t.add_argument("--alpha", type=float, default=1.0)
    t.add_argument("--min-support", type=int, default=50)
    t.add_argument("--sample-cap", type=int, default=10_000)
    t.add_argument("--endorsement-scale", type=float, default=1.0)
    t.add_argument("--uniform-prior", action="store_true")
    t.add_argument("--strict", action="store_true", help="abort on the first malformed record")
    t.add_argument("--report-dir")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("inspect", help="dump CUPs")
    i.add_argument("model")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)

    e = sub.add_parser("evaluate", help="metrics + CIs from raw A/B counts")
    e.add_argument("--counts", required=True, help="JSON list/{'arms': [...]} or CSV")
    e.add_argument("--baseline")
    e.add_argument("--out")
    e.add_argument("--report-dir")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="synthetic workload -> train -> simulated A/B")
    s.add_argument("--scenario", required=True)
    s.add_argument("--arms", default="global,contextual")
    s.add_argument("--seed", type=int)
    s.add_argument("--model", help="use this artifact instead of training")
    s.add_argument("--save-model")
    s.add_argument("--out")
    s.add_argument("--report-dir")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("generate", help="write a synthetic review log")
    g.add_argument("--scenario", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--truth")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("serve", help="HTTP ranking service")
    v.add_argument("--model")
    v.add_argument("--listen", help=f"host:port (default ${LISTEN_ENV} or 127.0.0.1:8080)")
    v.add_argument("--lenient", action="store_true")
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, args.command, str(exc))
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, args.command, str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, args.command, str(exc))
    except Exception as exc:  # pragma: no cover - last-resort guard
        logging.getLogger(__name__).exception("internal error")
        return _fail(EXIT_INTERNAL, args.command, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
