"""Command-line interface.

    gwa train   --config cfg.toml --out runs/exp1
    gwa ingest  --trace trace.bin --out analysis/
    gwa analyze stop|rank|compare --trace analysis/
    gwa plot    --report runs/exp1/report.json --out plots/
    gwa bench

`analyze` and `plot` operate on the directories produced by train/ingest.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, controller
from .ingest import ingest_stream, read_scores
from .moments import DEFAULT_BETA, GwaSeries
from .projection import ProjectionSpec


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def cmd_train(args) -> int:
    from .harness import emit_plots, train
    from .harness.train import TrainerConfig

    config = TrainerConfig.from_toml(args.config)
    out_dir = Path(args.out)
    result = train(config, out_dir=out_dir)
    report = json.loads((out_dir / "report.json").read_text())
    if args.plots:
        created = emit_plots(report, out_dir / "plots", scores=result.scores)
        report["paths"]["plots"] = [f"plots/{name}" for name in created]
        _write_json(out_dir / "report.json", report)
    decision = result.decisions["gwa_scratch"]
    print(json.dumps(decision))
    return 0


def cmd_ingest(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    score_sink = open(out_dir / "scores.bin", "wb") if args.per_sample else None
    try:
        if args.trace == "-":
            source = sys.stdin.buffer
            result = _ingest_with_projection(source, args, score_sink)
        else:
            with open(args.trace, "rb") as fh:
                result = _ingest_with_projection(fh, args, score_sink)
    finally:
        if score_sink is not None:
            score_sink.close()

    with open(out_dir / "epochs.jsonl", "w") as fh:
        result.series.write_jsonl(fh)
    _write_json(
        out_dir / "labelwave.json",
        {"prediction_changes": result.prediction_changes},
    )

    decision_doc = _decide(result.series, result.prediction_changes, args.criterion, args.warmup)
    _write_json(out_dir / "decision.json", decision_doc)
    print(json.dumps(decision_doc))
    return 0


def _ingest_with_projection(source, args, score_sink):
    projection = None
    if args.projection_dim:
        # peek the header to learn the source dimension
        header_bytes = source.read(32)
        from .trace import TraceHeader

        header = TraceHeader.unpack(header_bytes)
        projection = ProjectionSpec(
            source_dim=header.latent_dim,
            target_dim=args.projection_dim,
            seed=args.projection_seed,
        )
        import io as _io

        class _Chained:
            def __init__(self, head, rest):
                self._head = _io.BytesIO(head)
                self._rest = rest

            def read(self, n=-1):
                chunk = self._head.read(n)
                if chunk:
                    return chunk
                return self._rest.read(n)

        source = _Chained(header_bytes, source)
    return ingest_stream(
        source,
        beta=args.beta,
        include_bias=args.include_bias,
        retain_scores=False,
        score_sink=score_sink,
        projection=projection,
    )


def _decide(series: GwaSeries, changes, criterion: str, warmup: float) -> dict:
    if criterion == "scratch":
        decision = controller.select_scratch(series, warmup)
    elif criterion == "finetune":
        decision = controller.select_finetune(series)
    elif criterion == "labelwave":
        decision = controller.decide_from_changes(
            controller.PredictionChangeSeries(list(changes)), warmup
        )
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    doc = decision.to_json_obj()
    doc["series_epochs"] = len(series)
    return doc


def _load_series(trace_dir: Path) -> GwaSeries:
    path = trace_dir / "epochs.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `gwa ingest` or `gwa train` first")
    with open(path) as fh:
        return GwaSeries.from_jsonl(fh)


def cmd_analyze(args) -> int:
    trace_dir = Path(args.trace)
    if args.what == "stop":
        series = _load_series(trace_dir)
        changes = None
        lw = trace_dir / "labelwave.json"
        if lw.exists():
            changes = json.loads(lw.read_text())["prediction_changes"]
        if args.criterion == "labelwave" and changes is None:
            raise FileNotFoundError(f"{lw} required for the labelwave criterion")
        doc = _decide(series, changes, args.criterion, args.warmup)
        print(json.dumps(doc, indent=2))
        return 0

    from .harness.analyze import compare_gradient_norm, rank_samples

    scores = read_scores(trace_dir / "scores.bin")
    if args.what == "rank":
        epoch = args.epoch
        if epoch is None:
            epoch = int(scores["epoch"].max())
        ranking = rank_samples(scores, epoch)
        doc = ranking.to_json_obj(top=args.top)
        report_path = trace_dir / "report.json"
        if report_path.exists():
            flipped = json.loads(report_path.read_text()).get("flipped_sample_ids", [])
            if flipped:
                doc["precision_at_num_flipped"] = ranking.precision_at_k(
                    np.asarray(flipped, dtype=np.uint64)
                )
                doc["num_flipped"] = len(flipped)
        print(json.dumps(doc, indent=2))
        return 0

    if args.what == "compare":
        doc = compare_gradient_norm(scores).to_json_obj()
        print(json.dumps(doc, indent=2))
        return 0
    raise ValueError(f"unknown analyze subcommand {args.what!r}")


def cmd_plot(args) -> int:
    from .harness.plots import emit_plots

    report_path = Path(args.report)
    report = json.loads(report_path.read_text())
    scores = None
    scores_rel = report.get("paths", {}).get("scores")
    if scores_rel:
        scores_path = report_path.parent / scores_rel
        if scores_path.exists():
            scores = read_scores(scores_path)
    created = emit_plots(report, Path(args.out), scores=scores)
    print(json.dumps({"created": created}))
    return 0


def cmd_bench(args) -> int:
    from . import bench

    result = bench.run(
        samples=args.samples, dim=args.dim, classes=args.classes, batch=args.batch
    )
    print(json.dumps(result, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwa", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gwa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the reference trainer from a TOML config")
    p.add_argument("--config", required=True, help="TOML config path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plots", action="store_true", help="also render figures")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ingest", help="consume a telemetry trace")
    p.add_argument("--trace", required=True, help="trace file or - for stdin")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-sample", action="store_true", help="write per-sample scores")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--include-bias", action="store_true")
    p.add_argument("--criterion", choices=["scratch", "finetune", "labelwave"], default="scratch")
    p.add_argument("--warmup", type=float, default=0.10)
    p.add_argument("--projection-dim", type=int, default=0, help="enable projection to this dim")
    p.add_argument("--projection-seed", type=int, default=0)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("analyze", help="analyze a produced trace directory")
    p.add_argument("what", choices=["stop", "rank", "compare"])
    p.add_argument("--trace", required=True, help="directory from train/ingest")
    p.add_argument("--criterion", choices=["scratch", "finetune", "labelwave"], default="scratch")
    p.add_argument("--warmup", type=float, default=0.10)
    p.add_argument("--epoch", type=int, default=None, help="epoch for rank (default: last)")
    p.add_argument("--top", type=int, default=20, help="ranked samples to print")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("plot", help="render CSV and SVG figures from a report")
    p.add_argument("--report", required=True, help="report.json path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("bench", help="compare kernel backends on a synthetic trace")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--batch", type=int, default=512)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
