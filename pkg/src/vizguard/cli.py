"""Command-line entry points.

Exit code contract: 0 on success, 1 on task failure, 2 on usage error
(including unknown flags, which argparse rejects).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import bench as bench_mod
from . import gateway, report as report_mod
from .bench import AblationConfig, CaseRecord, load_case_record, load_cases, scenario_counts
from .chartspec import canonicalize, parse_spec
from .errors import VizGuardError
from .evaluator import (
    PERCEPTUAL_WEIGHTS,
    STRUCTURAL_WEIGHTS,
    aggregate_layer,
    combine_scores,
    score_perceptual,
    score_structural,
)
from .chartspec import extract_features
from .orchestrator import (
    Watchdog,
    dispatch_interface,
    run_task,
    _init_state,
)
from .rules import TaskInput

_ABLATIONS = {
    None: AblationConfig(),
    "no-rules": AblationConfig(no_rules=True),
    "no-db": AblationConfig(no_db_agent=True),
    "no-eval": AblationConfig(no_eval_agent=True),
    "only-gen": AblationConfig(only_gen=True),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vizguard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a single case end to end")
    run_p.add_argument("--case", required=True, help="case file path or case id (with --cases)")
    run_p.add_argument("--cases", help="manifest used to resolve --case by id")
    run_p.add_argument("--db-root", help="root for relative db paths in a single-case file")
    run_p.add_argument("--model", default="mock", help="mock or provider:<model-id>")
    run_p.add_argument("--script", help="mock script file")
    run_p.add_argument("--provider-config", help="provider config file for live models")
    run_p.add_argument("--vlm-script", help="scripted vision-model responses")
    run_p.add_argument("--ablation", choices=["no-rules", "no-db", "no-eval", "only-gen"])
    run_p.add_argument("--alpha", type=float, default=0.5)
    run_p.add_argument("--max-iter", type=int, default=10)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", default="vizguard-out")
    run_p.add_argument("--render", action="store_true", help="render the final spec (needs the chartrender sandbox)")
    run_p.add_argument("--render-cmd", default="chartrender")

    bench_p = sub.add_parser("bench", help="run a case manifest and emit a report")
    bench_p.add_argument("--cases", required=True)
    bench_p.add_argument("--model", default="mock")
    bench_p.add_argument("--provider-config")
    bench_p.add_argument("--ablation", choices=["no-rules", "no-db", "no-eval", "only-gen"])
    bench_p.add_argument("--alpha", type=float, default=0.5)
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.add_argument("--max-iter", type=int, default=10)
    bench_p.add_argument("--fault-every", type=int, default=0, help="garble every Nth mock completion")
    bench_p.add_argument("--baseline", help="baseline report.json for deltas")
    bench_p.add_argument("--out", required=True)

    eval_p = sub.add_parser("eval", help="score a candidate spec against a reference")
    eval_p.add_argument("--candidate", required=True)
    eval_p.add_argument("--reference", required=True)
    eval_p.add_argument("--image", help="rendered candidate image for perceptual scoring")
    eval_p.add_argument("--vlm-script", help="scripted vision-model responses")
    eval_p.add_argument("--alpha", type=float, default=0.5)
    eval_p.add_argument("--out")

    repl_p = sub.add_parser("repl", help="interactive refinement session")
    repl_p.add_argument("--case", required=True)
    repl_p.add_argument("--cases")
    repl_p.add_argument("--db-root")
    repl_p.add_argument("--model", default="mock")
    repl_p.add_argument("--script")
    repl_p.add_argument("--provider-config")
    repl_p.add_argument("--seed", type=int, default=0)
    repl_p.add_argument("--out", default="vizguard-out")

    report_p = sub.add_parser("report", help="render tables and figures from a report")
    report_p.add_argument("--report", required=True)
    report_p.add_argument("--baseline")
    report_p.add_argument("--out", required=True)

    return parser


class UsageError(Exception):
    pass


def _load_case(args) -> CaseRecord:
    candidate = Path(args.case)
    for path in (candidate, candidate.with_suffix(".json") if candidate.suffix == "" else None):
        if path is not None and path.is_file():
            row = json.loads(path.read_text(encoding="utf-8"))
            root = Path(args.db_root) if getattr(args, "db_root", None) else path.parent
            return load_case_record(row, root)
    if getattr(args, "cases", None):
        for record in load_cases(args.cases):
            if record.case_id == args.case:
                return record
        raise UsageError(f"case id {args.case!r} not found in {args.cases}")
    raise UsageError(f"case file not found: {args.case}")


def _make_providers(args, case: CaseRecord | None = None):
    script = getattr(args, "script", None) or (case.script if case else None)
    provider = gateway.make_provider(args.model, script=script, config_path=getattr(args, "provider_config", None))
    vlm_script = getattr(args, "vlm_script", None) or (case.vlm_script if case else None)
    vlm = gateway.MockProvider(gateway.load_script(vlm_script), strict=True) if vlm_script else None
    return provider, vlm


def _cmd_run(args) -> int:
    case = _load_case(args)
    provider, vlm = _make_providers(args, case)
    ablation = _ABLATIONS[args.ablation]
    config = bench_mod.build_run_config(ablation, provider, vlm, t_max=args.max_iter, seed=args.seed, alpha=args.alpha)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.trace_path = str(out_dir / f"{case.case_id}.trace.jsonl")
    if args.render:
        config.render_command = args.render_cmd.split()

    outcome = run_task(bench_mod.make_task(case), config)
    spec_path = None
    rendered = None
    if outcome.final_spec is not None:
        spec_path = out_dir / f"{case.case_id}.spec.json"
        spec_path.write_text(canonicalize(outcome.final_spec).source_text, encoding="utf-8")
        if args.render:
            rendered = _render_final(config.render_command, spec_path, out_dir / f"{case.case_id}.png")
    print(
        json.dumps(
            {
                "id": case.case_id,
                "status": outcome.status,
                "iterations": outcome.iterations_used,
                "spec": None if spec_path is None else str(spec_path),
                "rendered": rendered,
                "trace": config.trace_path,
                "error": None if outcome.error is None else f"{outcome.error.kind.value}: {outcome.error.detail}",
            },
            indent=2,
        )
    )
    return 0 if outcome.succeeded else 1


def _render_final(render_command, spec_path: Path, out_path: Path) -> str | None:
    import subprocess

    cmd = list(render_command) + ["render", "--spec", str(spec_path), "--out", str(out_path), "--timeout", "60"]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=90)
    except (OSError, subprocess.TimeoutExpired) as exc:
        print(f"render skipped: {exc}", file=sys.stderr)
        return None
    if proc.returncode != 0:
        print(f"render failed: {proc.stdout.strip() or proc.stderr.strip()}", file=sys.stderr)
        return None
    return str(out_path)


def _cmd_bench(args) -> int:
    cases = load_cases(args.cases)
    counts = scenario_counts(cases)
    print(f"loaded {len(cases)} cases " + " ".join(f"{s}:{n}" for s, n in counts.items()), file=sys.stderr)
    ablation = _ABLATIONS[args.ablation]
    ablation = AblationConfig(
        no_rules=ablation.no_rules,
        no_db_agent=ablation.no_db_agent,
        no_eval_agent=ablation.no_eval_agent,
        only_gen=ablation.only_gen,
        alpha=args.alpha,
        seed=args.seed,
    )

    def provider_factory(case: CaseRecord):
        if args.model == "mock":
            return bench_mod.default_provider_factory(case, fault_every=args.fault_every)
        return gateway.make_provider(args.model, config_path=args.provider_config)

    report = bench_mod.run_benchmark(
        cases,
        ablation,
        provider_factory=provider_factory,
        run_overrides={"t_max": args.max_iter},
        trace_dir=str(Path(args.out) / "traces"),
    )
    baseline = None
    if args.baseline:
        baseline = bench_mod.RunReport.from_json(Path(args.baseline).read_text(encoding="utf-8"))
    paths = report_mod.write_report(report, args.out, baseline=baseline)
    print(json.dumps(paths, indent=2))
    checked = [c for c in report.cases if "expect_ok" in c]
    failed_expectations = [c["id"] for c in checked if not c["expect_ok"]]
    if failed_expectations:
        print(f"expectation failures: {', '.join(failed_expectations)}", file=sys.stderr)
        return 1
    return 0


def _cmd_eval(args) -> int:
    candidate = parse_spec(Path(args.candidate).read_text(encoding="utf-8"))
    reference = parse_spec(Path(args.reference).read_text(encoding="utf-8"))
    for name, spec in (("candidate", candidate), ("reference", reference)):
        if not hasattr(spec, "root"):
            raise UsageError(f"{name} spec does not parse: {spec}")
    structural = score_structural(extract_features(candidate), extract_features(reference))
    s_low = aggregate_layer(structural.as_tuple(), STRUCTURAL_WEIGHTS)
    result: dict = {
        "structural": {k: v for k, v in zip(("chart_type", "data_mapping", "encoding", "interaction", "config", "transform"), structural.as_tuple())},
        "s_low": s_low,
    }
    if args.image and args.vlm_script:
        vlm = gateway.MockProvider(gateway.load_script(args.vlm_script), strict=True)
        perceptual = score_perceptual(args.image, "standalone evaluation", vlm)
        s_high = aggregate_layer(perceptual.normalized_dimensions(), PERCEPTUAL_WEIGHTS)
        combined = combine_scores(s_low, s_high, args.alpha)
        result["perceptual"] = list(perceptual.raw)
        result["s_high"] = s_high
        result["s_vis"] = combined.s_vis
        result["percent"] = {"low": combined.percent()[0], "high": combined.percent()[1], "overall": combined.percent()[2]}
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(text + "\n", encoding="utf-8")
    return 0


def _cmd_repl(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    case = _load_case(args)
    provider, vlm = _make_providers(args, case)
    config = bench_mod.build_run_config(AblationConfig(seed=args.seed), provider, vlm)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    task = bench_mod.make_task(case)
    if task.prior_spec is None and case.ground_truth_spec:
        # refine an existing chart when the case ships one
        gt = parse_spec(Path(case.ground_truth_spec).read_text(encoding="utf-8"))
        if hasattr(gt, "root"):
            task = TaskInput(
                query=task.query,
                database=task.database,
                ref_image=task.ref_image,
                ref_code=task.ref_code,
                prior_spec=gt,
            )
    state = _init_state(task, config)
    if state.current_spec is None:
        outcome = run_task(task, config)
        if outcome.final_spec is None:
            print(f"could not establish a starting spec: {outcome.status}", file=stdout)
            return 1
        state.current_spec = outcome.final_spec
    watchdog = Watchdog(deadline=time.monotonic() + config.watchdog_seconds, max_ticks=config.watchdog_ticks)

    print("refinement session; :quit ends, :undo pops, :show prints the spec", file=stdout)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":show":
            print(state.current_spec.source_text, file=stdout)
            continue
        if line == ":undo":
            if state.spec_history:
                state.current_spec = state.spec_history.pop()
                print("reverted to previous spec", file=stdout)
            else:
                print("nothing to undo", file=stdout)
            continue
        if line.startswith(":save"):
            target = line.split(maxsplit=1)[1] if " " in line else str(out_dir / "repl.spec.json")
            Path(target).write_text(state.current_spec.source_text, encoding="utf-8")
            print(f"saved {target}", file=stdout)
            continue
        try:
            result = dispatch_interface("modify_chart_spec", {"feedback": [line]}, state, config, watchdog)
            if not result.ok:
                print(f"turn failed ({result.status}): {result.detail or result.error}", file=stdout)
                continue
            evaluation = dispatch_interface("evaluate_visualization", {}, state, config, watchdog)
            report = evaluation.payload
            verdict = "passed" if report.passed else "needs work"
            recs = "; ".join(r.text for r in report.recommendations[:3]) or "none"
            print(f"modified; evaluation {verdict}; recommendations: {recs}", file=stdout)
        except VizGuardError as exc:
            print(f"turn error: {exc}", file=stdout)
    final_path = out_dir / f"{case.case_id}.repl.spec.json"
    final_path.write_text(state.current_spec.source_text, encoding="utf-8")
    print(f"session spec written to {final_path}", file=stdout)
    return 0


def _cmd_report(args) -> int:
    report = bench_mod.RunReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    baseline = None
    if args.baseline:
        baseline = bench_mod.RunReport.from_json(Path(args.baseline).read_text(encoding="utf-8"))
    paths = report_mod.write_report(report, args.out, baseline=baseline)
    print(json.dumps(paths, indent=2))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "bench": _cmd_bench,
        "eval": _cmd_eval,
        "repl": _cmd_repl,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VizGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
