"""Benchmark harness: load cases, run them across ablations, aggregate scores.

A case manifest is a JSONL file, one record per case, paths relative to the
manifest's directory.  The harness never dies on a bad case: every case yields
a per-case record regardless of failures, and a run report serializes
deterministically (no timestamps, sorted keys) so identical inputs produce
identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import gateway
from .chartspec import ChartSpec, DataTable, canonicalize, extract_features, parse_spec, validate_spec
from .errors import FormatError, VizGuardError
from .evaluator import (
    PERCEPTUAL_DIMENSIONS,
    PERCEPTUAL_WEIGHTS,
    STRUCTURAL_DIMENSIONS,
    STRUCTURAL_WEIGHTS,
    aggregate_layer,
    combine_scores,
    score_perceptual,
    score_structural,
)
from .orchestrator import RunConfig, TaskOutcome, run_task
from .rules import TaskInput

SCENARIOS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class CaseRecord:
    """One benchmark case; all paths are absolute after loading."""

    case_id: str
    scenario: str
    nlq: str
    db: str | None = None
    ref_image: str | None = None
    ref_code: str | None = None
    initial_spec: str | None = None
    ground_truth_spec: str | None = None
    expected_result: dict | None = None
    rendered_image: str | None = None
    script: str | None = None
    vlm_script: str | None = None
    expect: dict | None = None


@dataclass(frozen=True)
class ReliabilityStats:
    task_success_rate: float
    code_execution_success_rate: float
    task_success_delta: float | None = None
    code_execution_delta: float | None = None


@dataclass(frozen=True)
class AblationConfig:
    """Benchmark variant flags; at most one ablation may be active."""

    no_rules: bool = False
    no_db_agent: bool = False
    no_eval_agent: bool = False
    only_gen: bool = False
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if sum((self.no_rules, self.no_db_agent, self.no_eval_agent, self.only_gen)) > 1:
            raise VizGuardError("ablation flags are mutually exclusive", code="ConfigError")

    def label(self) -> str:
        for name in ("no_rules", "no_db_agent", "no_eval_agent", "only_gen"):
            if getattr(self, name):
                return name
        return "full"


@dataclass
class RunReport:
    cases: list[dict] = field(default_factory=list)
    ablation: str = "full"
    alpha: float = 0.5
    seed: int = 0

    def to_json(self) -> str:
        doc = {
            "ablation": self.ablation,
            "alpha": self.alpha,
            "seed": self.seed,
            "cases": self.cases,
        }
        return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        doc = json.loads(text)
        return cls(
            cases=doc.get("cases", []),
            ablation=doc.get("ablation", "full"),
            alpha=doc.get("alpha", 0.5),
            seed=doc.get("seed", 0),
        )


_REQUIRED_BY_SCENARIO = {"B": "ref_image", "C": "ref_code", "D": "initial_spec"}


def _resolve(root: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else root / p)


def load_case_record(row: dict, root: Path) -> CaseRecord:
    case_id = row.get("id", "<missing id>")
    for key in ("id", "scenario", "nlq"):
        if key not in row:
            raise FormatError(f"case {case_id}: missing field {key!r}")
    scenario = row["scenario"]
    if scenario not in SCENARIOS:
        raise FormatError(f"case {case_id}: unknown scenario {scenario!r}")
    record = CaseRecord(
        case_id=row["id"],
        scenario=scenario,
        nlq=row["nlq"],
        db=_resolve(root, row.get("db")),
        ref_image=_resolve(root, row.get("ref_image")),
        ref_code=_resolve(root, row.get("ref_code")),
        initial_spec=_resolve(root, row.get("initial_spec")),
        ground_truth_spec=_resolve(root, row.get("ground_truth_spec")),
        expected_result=row.get("expected_result"),
        rendered_image=_resolve(root, row.get("rendered_image")),
        script=_resolve(root, row.get("script")),
        vlm_script=_resolve(root, row.get("vlm_script")),
        expect=row.get("expect"),
    )
    required = _REQUIRED_BY_SCENARIO.get(scenario)
    if required and getattr(record, required) is None:
        raise FormatError(f"case {case_id}: scenario {scenario} requires {required!r}")
    for attr in ("db", "ref_image", "ref_code", "initial_spec", "ground_truth_spec", "rendered_image", "script", "vlm_script"):
        path = getattr(record, attr)
        if path is not None and not Path(path).is_file():
            raise FormatError(f"case {case_id}: {attr} file not found: {path}")
    return record


def load_cases(path: str) -> list[CaseRecord]:
    """Load a JSONL case manifest; every referenced file must exist."""
    manifest = Path(path)
    if not manifest.is_file():
        raise FormatError(f"manifest not found: {path}")
    root = manifest.parent
    cases = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        cases.append(load_case_record(row, root))
    return cases


def scenario_counts(cases: list[CaseRecord]) -> dict[str, int]:
    counts = {s: 0 for s in SCENARIOS}
    for case in cases:
        counts[case.scenario] += 1
    return counts


def _load_spec_file(path: str) -> ChartSpec:
    parsed = parse_spec(Path(path).read_text(encoding="utf-8"))
    if isinstance(parsed, ChartSpec):
        return parsed
    raise FormatError(f"spec file does not parse: {path}: {parsed}")


def make_task(case: CaseRecord) -> TaskInput:
    prior = _load_spec_file(case.initial_spec) if case.initial_spec else None
    return TaskInput(
        query=case.nlq,
        database=case.db,
        ref_image=case.ref_image,
        ref_code=case.ref_code,
        prior_spec=prior,
    )


def default_provider_factory(case: CaseRecord, fault_every: int = 0):
    """Scripted mock provider per case (each run owns its own script cursor)."""
    exchanges = gateway.load_script(case.script) if case.script else []
    provider = gateway.MockProvider(exchanges, strict=True)
    if fault_every > 0:
        provider = gateway.FaultInjectingProvider(provider, every=fault_every)
    return provider


def default_vlm_factory(case: CaseRecord):
    if case.vlm_script:
        return gateway.MockProvider(gateway.load_script(case.vlm_script), strict=True)
    return None


def build_run_config(ablation: AblationConfig, provider, vlm=None, **overrides) -> RunConfig:
    config = RunConfig(
        provider=provider,
        vlm=vlm,
        rules_enabled=not ablation.no_rules,
        db_agent_enabled=not ablation.no_db_agent,
        eval_enabled=not (ablation.no_eval_agent or ablation.only_gen),
        only_generation=ablation.only_gen,
        alpha=ablation.alpha,
        seed=ablation.seed,
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def _spec_data(spec: ChartSpec) -> DataTable:
    values = (spec.root.get("data") or {}).get("values")
    if isinstance(values, list) and values:
        return DataTable.from_values(values)
    return DataTable(columns=(), rows=())


def score_case(case: CaseRecord, outcome: TaskOutcome, vlm=None) -> dict:
    """Ground-truth scoring of one finished case (never raises)."""
    row: dict = {
        "s_low": None,
        "s_high": None,
        "structural": None,
        "perceptual": None,
        "spec_executed": False,
        "byte_equal": False,
    }
    candidate = outcome.final_spec
    if candidate is None or case.ground_truth_spec is None:
        return row
    try:
        reference = canonicalize(_load_spec_file(case.ground_truth_spec))
        candidate = canonicalize(candidate)
        structural = score_structural(extract_features(candidate), extract_features(reference))
        row["structural"] = dict(zip(STRUCTURAL_DIMENSIONS, structural.as_tuple()))
        row["s_low"] = aggregate_layer(structural.as_tuple(), STRUCTURAL_WEIGHTS)
        row["byte_equal"] = candidate.source_text == reference.source_text
        row["spec_executed"] = validate_spec(candidate, _spec_data(candidate)).valid
    except Exception as exc:  # scoring must not kill the harness
        row["score_error"] = f"{type(exc).__name__}: {exc}"
        return row
    if vlm is not None and case.rendered_image:
        try:
            perceptual = score_perceptual(case.rendered_image, case.nlq, vlm)
            row["perceptual"] = dict(zip(PERCEPTUAL_DIMENSIONS, perceptual.raw))
            row["s_high"] = aggregate_layer(perceptual.normalized_dimensions(), PERCEPTUAL_WEIGHTS)
        except Exception as exc:
            row["score_error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_benchmark(
    cases: list[CaseRecord],
    config: AblationConfig,
    provider_factory=None,
    vlm_factory=None,
    run_overrides: dict | None = None,
    trace_dir: str | None = None,
) -> RunReport:
    """Execute every case and assemble the run report.

    Failures are data: a crashed or failed run becomes a Failed record and the
    harness moves on.
    """
    provider_factory = provider_factory or default_provider_factory
    vlm_factory = vlm_factory or default_vlm_factory
    report = RunReport(ablation=config.label(), alpha=config.alpha, seed=config.seed)

    for case in cases:
        record: dict = {"id": case.case_id, "scenario": case.scenario}
        try:
            provider = provider_factory(case)
            vlm = vlm_factory(case)
            run_config = build_run_config(config, provider, vlm, **(run_overrides or {}))
            if trace_dir:
                run_config.trace_path = str(Path(trace_dir) / f"{case.case_id}.trace.jsonl")
            task = make_task(case)
            outcome = run_task(task, run_config)
        except Exception as exc:
            record.update(
                status=TaskOutcome.FAILED,
                error=f"{type(exc).__name__}: {exc}",
                iterations=0,
                error_events=0,
            )
            record.update(score_case(case, TaskOutcome(TaskOutcome.FAILED), None))
            report.cases.append(record)
            continue

        error_events = sum(1 for r in outcome.trace if r.get("event") == "rule" and r.get("rule") == "EH2")
        record.update(
            status=outcome.status,
            error=None if outcome.error is None else f"{outcome.error.kind.value}: {outcome.error.detail}",
            iterations=outcome.iterations_used,
            error_events=error_events,
        )
        record.update(score_case(case, outcome, vlm_factory(case)))
        if record.get("s_low") is not None and record.get("s_high") is not None:
            record["s_vis"] = combine_scores(record["s_low"], record["s_high"], config.alpha).s_vis
        else:
            record["s_vis"] = None
        if case.expect and config.label() == "full":
            # expectations describe the full pipeline; ablations deviate by design
            wanted = case.expect.get("status")
            record["expect_ok"] = wanted is None or record["status"] == wanted
        report.cases.append(record)
    return report


def compute_reliability(report: RunReport, baseline: RunReport | None = None) -> ReliabilityStats:
    """Task-success and spec-execution percentages, plus exact deltas against a
    baseline report when given."""
    if not report.cases:
        raise VizGuardError("report has no cases", code="EmptyReport")

    def _rates(r: RunReport) -> tuple[float, float]:
        total = len(r.cases)
        succeeded = sum(
            1 for c in r.cases if c.get("status") in (TaskOutcome.COMPLETE, TaskOutcome.COMPLETE_WITH_NOTES)
        )
        executed = sum(1 for c in r.cases if c.get("spec_executed"))
        return (round(100.0 * succeeded / total, 2), round(100.0 * executed / total, 2))

    task_rate, exec_rate = _rates(report)
    if baseline is None:
        return ReliabilityStats(task_rate, exec_rate)
    if not baseline.cases:
        raise VizGuardError("baseline report has no cases", code="EmptyReport")
    base_task, base_exec = _rates(baseline)
    return ReliabilityStats(
        task_success_rate=task_rate,
        code_execution_success_rate=exec_rate,
        task_success_delta=round(task_rate - base_task, 2),
        code_execution_delta=round(exec_rate - base_exec, 2),
    )


def summarize_scores(report: RunReport, alphas=(0.25, 0.5, 0.75)) -> list[dict]:
    """Per-scenario mean Low/High plus one Overall column per alpha.

    Cases without a score (failed runs) count as zero, so reliability and
    quality stay coupled the way the headline tables expect.
    """
    rows = []
    groups: dict[str, list[dict]] = {}
    for case in report.cases:
        groups.setdefault(case["scenario"], []).append(case)
    for scenario in list(s for s in SCENARIOS if s in groups) + ["all"]:
        bucket = report.cases if scenario == "all" else groups[scenario]
        if not bucket:
            continue
        low = sum((c.get("s_low") or 0.0) for c in bucket) / len(bucket)
        high = sum((c.get("s_high") or 0.0) for c in bucket) / len(bucket)
        row = {"scenario": scenario, "n": len(bucket), "low": low, "high": high, "overall": {}}
        for alpha in alphas:
            row["overall"][str(alpha)] = alpha * low + (1.0 - alpha) * high
        rows.append(row)
    return rows
