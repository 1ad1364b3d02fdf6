"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the criterion lines
as they complete.  Tolerances are pinned here, not configurable.
"""

from __future__ import annotations

import itertools
import json
import random
import shutil
import subprocess
import time

import pytest

from conftest import FIXTURES, action_text, final_text, minimal_spec_payload
from vizguard.bench import (
    AblationConfig,
    RunReport,
    compute_reliability,
    default_provider_factory,
    load_cases,
    run_benchmark,
    summarize_scores,
)
from vizguard.chartspec import extract_features, parse_spec
from vizguard.evaluator import combine_scores, score_structural
from vizguard.gateway import CallableProvider, MockProvider, ScriptedExchange
from vizguard.orchestrator import RunConfig, TaskOutcome, Watchdog, dispatch_interface, run_task, _init_state
from vizguard.rules import (
    BOUND_TABLE,
    INVALID,
    N_MAX,
    ClassifiedError,
    ErrorKind,
    ParamKind,
    RecoveryContext,
    RecoveryStrategy,
    TaskInput,
    cr_classify_task,
    eh_select_recovery,
    eh_validate_image,
    te_clamp_param,
)

PASS = "PASS"
FAIL = "FAIL"


def _report(criterion: str, ok: bool, detail: str = "") -> None:
    suffix = f"  ({detail})" if detail else ""
    print(f"[acceptance] {criterion}: {PASS if ok else FAIL}{suffix}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def golden_cases():
    return load_cases(str(FIXTURES / "manifest.jsonl"))


@pytest.fixture(scope="module")
def golden_report(golden_cases):
    return run_benchmark(golden_cases, AblationConfig())


SAFE_ACTIONS = (
    ("list_tables", {}),
    ("get_foreign_keys", {}),
    ("find_fields", {"keyword": "val"}),
    ("execute_sql", {"sql": "SELECT 1"}),
)


def _never_final(seed: int):
    rng = random.Random(seed)

    def fn(request, index):
        tool, args = SAFE_ACTIONS[rng.randrange(len(SAFE_ACTIONS))]
        return action_text(tool, args, thought=f"probe {rng.randrange(10_000)}")

    return fn


def test_termination_guarantee(tiny_db):
    """1,000 fuzz seeds with a never-final mock end at IterationLimit, exactly
    10 coordinator iterations, in under 60 seconds."""
    task = TaskInput(query="chart the samples", database=tiny_db)
    started = time.monotonic()
    failures = []
    for seed in range(1000):
        outcome = run_task(task, RunConfig(provider=CallableProvider(_never_final(seed))))
        if outcome.status != TaskOutcome.ITERATION_LIMIT or outcome.iterations_used != 10:
            failures.append((seed, outcome.status, outcome.iterations_used))
    elapsed = time.monotonic() - started
    _report(
        "termination (1000 adversarial seeds -> IterationLimit@10)",
        not failures and elapsed < 60.0,
        f"{elapsed:.1f}s, {len(failures)} deviations",
    )


def _fuzz_output(rng: random.Random) -> str:
    kind = rng.randrange(7)
    if kind == 0:  # binary-ish garbage
        return "".join(chr(rng.randrange(1, 0x800)) for _ in range(rng.randrange(0, 80)))
    if kind == 1:  # broken JSON in an action fence
        return "Thought: hm\n```action\n{\"tool\": \"execute_sql\", \"args\": {" + "x" * rng.randrange(5) + "\n```"
    if kind == 2:  # unknown tool
        return action_text(f"tool_{rng.randrange(100)}", {"a": 1})
    if kind == 3:  # known tool, missing required args
        return action_text("get_chart_template", {})
    if kind == 4:  # unbalanced fence
        return "Thought: t\n```action\n{\"tool\": \"list_tables\"}"
    if kind == 5:  # final with junk payload
        return final_text("".join(chr(rng.randrange(32, 0x300)) for _ in range(rng.randrange(0, 60))))
    return "prose only " + str(rng.random())


def test_crash_free_operation():
    """10,000 fuzzed model outputs through parse -> classify -> recover ->
    step produce structured results only, never an uncontrolled abort."""
    from vizguard.gateway import parse_tool_call
    from vizguard.rules import eh_classify_parse

    prior = parse_spec(
        '{"mark": "bar", "encoding": {"x": "k:N", "y": "v:Q"}, "data": {"values": [{"k": "a", "v": 1}]}}'
    )
    good = final_text(minimal_spec_payload().replace("label", "k").replace("value", "v"))
    rng = random.Random(20240806)
    aborts = 0
    statuses = set()
    for i in range(10_000):
        fuzz = _fuzz_output(rng)
        try:
            parsed = parse_tool_call(fuzz)
            classified = eh_classify_parse(fuzz)
            if classified is not None:
                eh_select_recovery(classified, RecoveryContext(attempts=i % (N_MAX + 1)))
            if i % 10 == 0:
                # every tenth sample repeats its garbage forever, driving the
                # step to a terminal (but structured) failure
                provider = MockProvider([ScriptedExchange(response=fuzz, once=False)])
            else:
                provider = MockProvider(
                    [ScriptedExchange(response=fuzz), ScriptedExchange(response=good, once=False)]
                )
            config = RunConfig(provider=provider)
            state = _init_state(TaskInput(query="refine", prior_spec=prior), config)
            watchdog = Watchdog(deadline=time.monotonic() + 30, max_ticks=5_000)
            result = dispatch_interface("modify_chart_spec", {"feedback": ["refine"]}, state, config, watchdog)
            statuses.add(result.status)
            if result.status == "failed":
                assert result.error is not None  # failure carries a structured record
        except Exception as exc:  # noqa: BLE001 - the whole point of the criterion
            aborts += 1
            if aborts <= 3:
                print(f"  abort on sample {i}: {type(exc).__name__}: {exc!r}")
    _report(
        "crash-free (10,000 fuzzed outputs, zero uncontrolled aborts)",
        aborts == 0,
        f"statuses seen: {sorted(statuses)}",
    )


def test_parameter_safety(tiny_db):
    """Random raw values for every bound-table entry: the tool layer never
    sees an out-of-range value; invalid kinds always yield Invalid plus
    RetryWithClamped or GracefulFail."""
    rng = random.Random(77)
    violations = 0
    for bound in BOUND_TABLE.values():  # every entry in the bound table
        for _ in range(1500):
            value = rng.choice(
                [
                    rng.randint(-(10**9), 10**9),
                    rng.uniform(-1e12, 1e12),
                    str(rng.randint(-10_000, 10_000)),
                    rng.choice(["many", "", None, True, False, [], {}, float("nan"), float("inf")]),
                ]
            )
            out = te_clamp_param(bound, value)
            if out is INVALID:
                action = eh_select_recovery(ErrorKind.PARAM, RecoveryContext(rng.randrange(N_MAX + 1)))
                if action.strategy not in (RecoveryStrategy.RETRY_WITH_CLAMPED, RecoveryStrategy.GRACEFUL_FAIL):
                    violations += 1
            elif bound.kind is not ParamKind.ENUM and not (bound.lower <= out <= bound.upper):
                violations += 1

    # integration: a clamped tool call never observes an out-of-range limit
    task = TaskInput(query="chart the samples", database=tiny_db)
    for raw in (5000, -12, "800", 10**9):
        provider = MockProvider(
            [
                ScriptedExchange(response=action_text("get_table", {"name": "samples", "row_limit": raw})),
                ScriptedExchange(response=final_text("SELECT label, value FROM samples")),
                ScriptedExchange(response=final_text(minimal_spec_payload())),
            ]
        )
        outcome = run_task(task, RunConfig(provider=provider))
        clamp_events = [
            p
            for r in outcome.trace
            if r.get("rule") == "TE1"
            for p in r.get("params", [])
            if p["param"] == "row_limit" and not p["invalid"]
        ]
        for event in clamp_events:
            if not (1 <= event["value"] <= 1000):
                violations += 1
    _report("parameter safety (no out-of-range value reaches the tool layer)", violations == 0)


def test_bounded_recovery(tiny_db):
    """Each of the six error kinds, injected at an inner step, reaches success
    or GracefulFail within three attempts (verified from traces)."""
    task = TaskInput(query="chart the samples", database=tiny_db)
    sql_final = final_text("SELECT label, value FROM samples")
    checked: dict[str, tuple[bool, int]] = {}

    def verify(kind: str, outcome_trace, expect_terminal: bool):
        chains = [r for r in outcome_trace if r.get("rule") == "EH2"]
        attempts = max((r["attempts"] for r in chains), default=0)
        terminal = any(r["strategy"] == "GracefulFail" for r in chains)
        ok = attempts <= N_MAX and (terminal == expect_terminal) and chains
        checked[kind] = (bool(ok), attempts)

    # ParseError: three bad replies then a good one -> recovered
    provider = MockProvider(
        [ScriptedExchange(response="gibberish")] * 3 + [ScriptedExchange(response=sql_final), ScriptedExchange(response=final_text(minimal_spec_payload()))]
    )
    outcome = run_task(task, RunConfig(provider=provider))
    verify("ParseError-recovered", outcome.trace, expect_terminal=False)
    ok_parse = outcome.status == TaskOutcome.COMPLETE

    # ParseError exhausted: garbage forever -> GracefulFail within bounds
    outcome = run_task(task, RunConfig(provider=CallableProvider(lambda r, i: "garbage forever")))
    verify("ParseError-exhausted", outcome.trace, expect_terminal=True)

    # ParamError: invalid value repaired by RetryWithClamped
    provider = MockProvider(
        [
            ScriptedExchange(response=action_text("get_table", {"name": "samples", "row_limit": "many"})),
            ScriptedExchange(response=sql_final),
            ScriptedExchange(response=final_text(minimal_spec_payload())),
        ]
    )
    outcome = run_task(task, RunConfig(provider=provider))
    verify("ParamError", outcome.trace, expect_terminal=False)

    # ExecError: failing SQL tool forever -> GracefulFail within bounds
    provider = CallableProvider(lambda r, i: action_text("execute_sql", {"sql": "SELECT * FROM missing"}))
    outcome = run_task(task, RunConfig(provider=provider))
    verify("ExecError", outcome.trace, expect_terminal=True)

    # TimeoutError: transport timeouts -> one retry then GracefulFail
    from vizguard.errors import GatewayError

    def raise_timeout(request, index):
        raise GatewayError("simulated deadline", code="Timeout", category="TimeoutError")

    outcome = run_task(task, RunConfig(provider=CallableProvider(raise_timeout)))
    verify("TimeoutError", outcome.trace, expect_terminal=True)

    # IoError: renderer tool raising an IO fault -> bounded GracefulFail
    provider = CallableProvider(lambda r, i: action_text("render_chart_spec", {}))
    config = RunConfig(provider=provider, render_command=["/nonexistent/renderer"])
    prior = parse_spec(
        '{"mark": "bar", "encoding": {"x": "k:N", "y": "v:Q"}, "data": {"values": [{"k": "a", "v": 1}]}}'
    )
    outcome = run_task(TaskInput(query="refine it", prior_spec=prior), config)
    verify("IoError", outcome.trace, expect_terminal=True)

    # ModelError: transport failure -> one retry then GracefulFail
    def raise_transport(request, index):
        raise GatewayError("connection reset", code="Transport", category="ModelError")

    outcome = run_task(task, RunConfig(provider=CallableProvider(raise_transport)))
    verify("ModelError", outcome.trace, expect_terminal=True)

    bad = {k: v for k, v in checked.items() if not v[0]}
    _report(
        "bounded recovery (six error kinds settle within 3 attempts)",
        not bad and ok_parse,
        "; ".join(f"{k}:attempts={v[1]}" for k, v in checked.items()),
    )


def test_classification_oracle():
    """Exhaustive presence enumeration matches brute-force argmax."""
    spec = parse_spec('{"mark": "bar", "encoding": {"x": "a:N"}}')
    priority = {"A": 1, "B": 2, "C": 3, "D": 4}
    mismatches = []
    for has_image, has_code, has_prior in itertools.product([False, True], repeat=3):
        eligible = ["A"] + (["B"] if has_image else []) + (["C"] if has_code else []) + (["D"] if has_prior else [])
        expected = max(eligible, key=priority.__getitem__)
        got = cr_classify_task(
            TaskInput(
                query="q",
                database="db",
                ref_image="i.png" if has_image else None,
                ref_code="c.py" if has_code else None,
                prior_spec=spec if has_prior else None,
            )
        ).value
        if got != expected:
            mismatches.append((has_image, has_code, has_prior, got, expected))
    _report("classification oracle (8-combination table vs argmax)", not mismatches, str(mismatches))


def test_evaluator_identity(corpus_specs):
    """score_structural(s, s) is 1.0 on every dimension for all fixture specs,
    including the four-layer case-study spec."""
    assert len(corpus_specs) >= 20
    failures = []
    for path in corpus_specs:
        bundle = extract_features(parse_spec(path.read_text()))
        scores = score_structural(bundle, bundle).as_tuple()
        if scores != (1.0,) * 6:
            failures.append((path.name, scores))
    case_study = extract_features(parse_spec((FIXTURES / "specs" / "b_001_gt.json").read_text()))
    assert len(case_study.marks) == 4
    _report(
        f"evaluator identity ({len(corpus_specs)} specs incl. 4-layer case study)",
        not failures,
        str(failures[:3]),
    )


TABLE2_ROWS = [
    ("basic/gemini", 65.95, 80.02, 72.99),
    ("basic/gpt", 58.80, 73.44, 66.12),
    ("image/gemini", 69.11, 82.16, 75.63),
    ("image/gpt", 61.30, 71.84, 66.57),
    ("code/gemini", 70.05, 83.11, 76.58),
    ("code/gpt", 59.67, 70.90, 65.28),
    ("refine/gemini", 62.44, 80.60, 71.52),
    ("refine/gpt", 50.12, 70.18, 60.15),
]


def test_score_recomposition():
    """combine_scores reproduces the printed Overall from printed Low/High at
    alpha = 0.5 within +/-0.015 on all eight rows."""
    worst = 0.0
    rows = []
    for name, low, high, printed in TABLE2_ROWS:
        got = combine_scores(low / 100.0, high / 100.0, 0.5).percent()[2]
        diff = abs(got - printed)
        worst = max(worst, diff)
        rows.append(f"{name}={got:.2f}")
    _report("score recomposition (8 rows within +/-0.015)", worst <= 0.015, f"worst diff {worst:.4f}")


def _synth_report(success: int, executed: int, total: int = 10_000) -> RunReport:
    cases = [
        {
            "id": f"c{i}",
            "scenario": "A",
            "status": "Complete" if i < success else "Failed",
            "spec_executed": i < executed,
        }
        for i in range(total)
    ]
    return RunReport(cases=cases)


def test_reliability_arithmetic():
    """compute_reliability reproduces the published deltas exactly."""
    expectations = [
        # (ours_success, ours_exec, base_success, base_exec, d_task, d_exec)
        (9868, 9571, 7822, 6318, 20.46, 32.53),
        (9958, 9456, 7448, 6510, 25.10, 29.46),
        (9981, 9632, 9056, 8112, 9.25, 15.20),
        (10000, 9710, 9203, 8333, 7.97, 13.77),
    ]
    failures = []
    for ours_s, ours_e, base_s, base_e, d_task, d_exec in expectations:
        stats = compute_reliability(_synth_report(ours_s, ours_e), _synth_report(base_s, base_e))
        if stats.task_success_delta != d_task or stats.code_execution_delta != d_exec:
            failures.append((d_task, stats.task_success_delta, d_exec, stats.code_execution_delta))
    _report("reliability arithmetic (exact deltas incl. +20.46 / +32.53)", not failures, str(failures))


def test_golden_end_to_end(golden_cases):
    """Ten desk cases, two or more per scenario, all Complete with canonical
    specs byte-equal to ground truth, inside 30 seconds."""
    started = time.monotonic()
    report = run_benchmark(golden_cases, AblationConfig())
    elapsed = time.monotonic() - started
    scenarios = {c.scenario for c in golden_cases}
    per_scenario = {s: sum(1 for c in golden_cases if c.scenario == s) for s in sorted(scenarios)}
    complete = [c for c in report.cases if c["status"] == "Complete"]
    byte_equal = [c for c in report.cases if c["byte_equal"]]
    validated = [c for c in report.cases if c["spec_executed"]]
    stats = compute_reliability(report)
    ok = (
        len(golden_cases) == 10
        and all(n >= 2 for n in per_scenario.values())
        and len(complete) == 10
        and len(byte_equal) == 10
        and len(validated) == 10
        and stats.task_success_rate == 100.0
        and stats.code_execution_success_rate == 100.0
        and elapsed < 30.0
    )
    _report(
        "golden end-to-end (10/10 Complete, byte-equal, 100%/100%)",
        ok,
        f"{elapsed:.1f}s, per-scenario {per_scenario}",
    )


def test_ablation_no_rules_drops_success(golden_cases):
    """With rules disabled and a fault-injecting mock, task success falls
    strictly below the rule-enabled run (direction-only check)."""
    with_rules = run_benchmark(
        golden_cases,
        AblationConfig(),
        provider_factory=lambda c: default_provider_factory(c, fault_every=2),
    )
    without_rules = run_benchmark(
        golden_cases,
        AblationConfig(no_rules=True),
        provider_factory=lambda c: default_provider_factory(c, fault_every=2),
        run_overrides={"watchdog_ticks": 500, "watchdog_seconds": 30},
    )
    on = compute_reliability(with_rules).task_success_rate
    off = compute_reliability(without_rules).task_success_rate
    _report(
        "ablation behavior (no-rules success strictly below rules-on)",
        off < on,
        f"rules-on {on}% vs no-rules {off}%",
    )


def test_alpha_sweep(golden_report):
    """summarize_scores emits the three alpha columns and each equals the
    direct affine computation to 1e-9 before rounding."""
    alphas = (0.25, 0.5, 0.75)
    rows = summarize_scores(golden_report, alphas=alphas)
    worst = 0.0
    for row in rows:
        bucket = [c for c in golden_report.cases if row["scenario"] in ("all", c["scenario"])]
        low = sum((c.get("s_low") or 0.0) for c in bucket) / len(bucket)
        high = sum((c.get("s_high") or 0.0) for c in bucket) / len(bucket)
        for alpha in alphas:
            direct = alpha * low + (1 - alpha) * high
            worst = max(worst, abs(row["overall"][str(alpha)] - direct))
    columns_ok = all(set(r["overall"]) == {"0.25", "0.5", "0.75"} for r in rows)
    _report("alpha sweep (three columns, affine to 1e-9)", columns_ok and worst <= 1e-9, f"worst {worst:.2e}")


RENDERER = shutil.which("chartrender")


@pytest.mark.skipif(RENDERER is None, reason="secondary render sandbox not installed")
def test_render_round_trip(tmp_path, corpus_specs):
    """[SECONDARY] every ground-truth fixture spec renders to a PNG that
    passes image validation; an invalid spec exits 1 with a structured error;
    an endless snippet exits 124 within the timeout bound."""
    gt_specs = [p for p in corpus_specs if p.name.endswith("_gt.json")]
    rendered = 0
    for spec_path in gt_specs:
        out = tmp_path / f"{spec_path.stem}.png"
        proc = subprocess.run(
            ["chartrender", "render", "--spec", str(spec_path), "--out", str(out), "--timeout", "30"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, (spec_path.name, proc.stdout, proc.stderr)
        assert eh_validate_image(str(out)), spec_path.name
        rendered += 1

    bad = tmp_path / "bad.json"
    bad.write_text('{"mark": "nonsense"}')
    proc = subprocess.run(
        ["chartrender", "render", "--spec", str(bad), "--out", str(tmp_path / "bad.png"), "--timeout", "10"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    error_record = json.loads(proc.stdout.strip().splitlines()[-1])
    assert error_record["ok"] is False and error_record["error"]["kind"]

    loop = tmp_path / "loop.py"
    loop.write_text("while True:\n    pass\n")
    started = time.monotonic()
    proc = subprocess.run(
        ["chartrender", "exec", "--snippet", str(loop), "--out-dir", str(tmp_path), "--timeout", "2"],
        capture_output=True,
        text=True,
    )
    elapsed = time.monotonic() - started
    assert proc.returncode == 124 and elapsed < 30
    _report("render round-trip (secondary)", True, f"{rendered} spec renders, timeout at {elapsed:.1f}s")
