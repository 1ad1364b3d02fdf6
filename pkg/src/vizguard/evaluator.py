"""Dual-layer chart evaluation.

The structural layer compares two feature bundles along six dimensions (chart
type, data mapping, encoding styling, interactions, configuration, and
transforms), each scored 0..1 by a deterministic rubric.  The perceptual layer
asks a vision model to grade a rendered chart on six weighted dimensions whose
point maxima sum to 100.  Layer scores are weighted sums; the unified score is
the affine blend ``alpha * low + (1 - alpha) * high``.

``assess_candidate`` is the in-loop assessment used by the validation agent:
it needs no ground truth, grading the candidate against its own data and
turning every validation problem into a prioritized recommendation.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from . import gateway
from .chartspec import ChartSpec, DataTable, FeatureBundle, extract_features, validate_spec
from .errors import ConfigError, DomainError, InvalidImageError, ScoringUnavailable
from .rules import INVALID, ParamBound, ParamKind, _balanced_json_objects, eh_validate_image, rc_select_model, te_clamp_param

STRUCTURAL_DIMENSIONS = ("chart_type", "data_mapping", "encoding", "interaction", "config", "transform")
PERCEPTUAL_DIMENSIONS = ("chart_type", "layout", "text_content", "data_fidelity", "style", "clarity")
PERCEPTUAL_MAXIMA = (20, 10, 20, 20, 20, 10)


@dataclass(frozen=True)
class WeightVector:
    """Six nonnegative weights summing to one (within 1e-9)."""

    weights: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        if len(self.weights) != 6:
            raise ConfigError("a weight vector has exactly six entries")
        if any(w < 0 for w in self.weights):
            raise ConfigError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigError(f"weights must sum to 1, got {sum(self.weights)}")


# Chart type and data mapping carry double weight; the remaining four split
# the rest evenly.
STRUCTURAL_WEIGHTS = WeightVector((0.25, 0.25, 0.125, 0.125, 0.125, 0.125))
PERCEPTUAL_WEIGHTS = WeightVector(tuple(m / 100 for m in PERCEPTUAL_MAXIMA))


@dataclass(frozen=True)
class StructuralScores:
    chart_type: float
    data_mapping: float
    encoding: float
    interaction: float
    config: float
    transform: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.chart_type,
            self.data_mapping,
            self.encoding,
            self.interaction,
            self.config,
            self.transform,
        )


@dataclass(frozen=True)
class PerceptualScores:
    """Raw point values per dimension; maxima are (20, 10, 20, 20, 20, 10)."""

    raw: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        for value, maximum in zip(self.raw, PERCEPTUAL_MAXIMA):
            if not (0 <= value <= maximum):
                raise DomainError(f"perceptual value {value} outside [0, {maximum}]")

    def normalized(self) -> float:
        return sum(self.raw) / 100.0

    def normalized_dimensions(self) -> tuple[float, ...]:
        return tuple(v / m for v, m in zip(self.raw, PERCEPTUAL_MAXIMA))


@dataclass(frozen=True)
class CombinedScore:
    s_low: float
    s_high: float
    s_vis: float
    alpha: float

    def percent(self) -> tuple[float, float, float]:
        return (_pct(self.s_low), _pct(self.s_high), _pct(self.s_vis))


def _pct(x: float) -> float:
    # half-to-even at two decimals, reported as a percentage
    return round(x * 100.0, 2)


@dataclass(frozen=True)
class Recommendation:
    priority: int
    text: str
    dimension: str = ""


@dataclass(frozen=True)
class EvaluationReport:
    passed: bool
    structural: StructuralScores
    perceptual: PerceptualScores | None = None
    recommendations: tuple[Recommendation, ...] = ()
    notes: tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "passed": self.passed,
            "structural": dict(zip(STRUCTURAL_DIMENSIONS, self.structural.as_tuple())),
            "perceptual": None if self.perceptual is None else list(self.perceptual.raw),
            "recommendations": [
                {"priority": r.priority, "text": r.text, "dimension": r.dimension}
                for r in self.recommendations
            ],
            "notes": list(self.notes),
        }


def _counter_similarity(a: Counter, b: Counter) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    matched = sum((a & b).values())
    union = sum((a | b).values())
    return matched / union


def _field_triples(bundle: FeatureBundle) -> dict[str, tuple]:
    out = {}
    for channel, enc in bundle.encodings:
        if enc.field:
            out[channel] = (enc.field, enc.dtype)
    return out


def _styling_attrs(bundle: FeatureBundle) -> Counter:
    attrs: Counter = Counter()
    for mark in bundle.marks:
        for key, value in mark.attrs:
            attrs[("mark", key, value)] += 1
    for channel, enc in bundle.encodings:
        if channel in ("color", "size", "shape", "opacity") and enc.literal is not None:
            attrs[("channel", channel, enc.literal)] += 1
    return attrs


def score_structural(
    candidate: FeatureBundle,
    reference: FeatureBundle,
    candidate_data: DataTable | None = None,
    reference_data: DataTable | None = None,
) -> StructuralScores:
    """Six-dimension structural comparison of a candidate against a reference.

    Identical inputs score 1.0 everywhere; an empty side against a non-empty
    side scores 0.0 on that dimension.
    """
    chart_type = _counter_similarity(
        Counter(m.mark_type for m in candidate.marks),
        Counter(m.mark_type for m in reference.marks),
    )

    cand_triples = _field_triples(candidate)
    ref_triples = _field_triples(reference)
    channels = set(cand_triples) | set(ref_triples)
    if not channels:
        data_mapping = 1.0
    else:
        matched = sum(
            1 for ch in channels if ch in cand_triples and cand_triples.get(ch) == ref_triples.get(ch)
        )
        data_mapping = matched / len(channels)

    encoding = _counter_similarity(_styling_attrs(candidate), _styling_attrs(reference))
    interaction = _counter_similarity(Counter(candidate.interactions), Counter(reference.interactions))

    config_slots = 0
    cc, rc = candidate.config, reference.config
    config_slots += cc.title == rc.title
    config_slots += cc.x_label == rc.x_label
    config_slots += cc.y_label == rc.y_label
    config_slots += cc.legend == rc.legend
    config = config_slots / 4.0

    transform = _counter_similarity(Counter(candidate.transforms), Counter(reference.transforms))

    return StructuralScores(chart_type, data_mapping, encoding, interaction, config, transform)


_SCORE_PROMPT = """You are grading a rendered chart for perceptual quality.
Context for the chart:
{context}

Score each dimension as points within its maximum:
- chart_type (0-20): suitability of the chart type for the data and task
- layout (0-10): clarity of element arrangement and visual hierarchy
- text_content (0-20): informational value of titles, labels, legends
- data_fidelity (0-20): how faithfully data patterns are revealed
- style (0-20): aesthetic appeal and functional effectiveness of styling
- clarity (0-10): overall readability

Reply with exactly one JSON object containing those six keys, for example:
{{"chart_type": 15, "layout": 8, "text_content": 16, "data_fidelity": 14, "style": 12, "clarity": 9}}
"""

_SCORE_REPROMPT = "\nYour previous reply had no usable score object. Reply with ONLY the JSON object."


def _parse_score_block(text: str) -> tuple[float, ...] | None:
    for blob in _balanced_json_objects(text):
        try:
            doc = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if not isinstance(doc, dict) or not all(k in doc for k in PERCEPTUAL_DIMENSIONS):
            continue
        values = []
        for key, maximum in zip(PERCEPTUAL_DIMENSIONS, PERCEPTUAL_MAXIMA):
            bound = ParamBound(key, 0, maximum, ParamKind.REAL, 0)
            clamped = te_clamp_param(bound, doc[key])
            if clamped is INVALID:
                values = []
                break
            values.append(clamped)
        if values:
            return tuple(values)
    return None


def score_perceptual(
    image: str | bytes,
    context: str,
    vlm,
    trace: list | None = None,
) -> PerceptualScores:
    """Grade a rendered chart with a vision model.

    The image must validate first; a reply without a parsable score object is
    reprompted once, after which scoring is reported unavailable.
    """
    if isinstance(image, (bytes, bytearray)):
        payload = bytes(image)
        media = "image/png" if payload.startswith(b"\x89PNG") else "image/jpeg"
    else:
        if not eh_validate_image(image):
            raise InvalidImageError(f"image failed validation: {image}")
        with open(image, "rb") as fh:
            payload = fh.read()
        media = "image/png" if payload.startswith(b"\x89PNG") else "image/jpeg"

    prompt = _SCORE_PROMPT.format(context=context)
    for attempt in range(2):
        parts = (gateway.TextPart(prompt if attempt == 0 else prompt + _SCORE_REPROMPT), gateway.ImagePart(payload, media))
        kind = rc_select_model(parts, (), vlm.models())
        request = gateway.ModelRequest(parts=parts, kind=kind)
        response = gateway.complete(request, vlm, trace)
        values = _parse_score_block(response.text)
        if values is not None:
            return PerceptualScores(values)
    raise ScoringUnavailable("vision model produced no parsable score block after one reprompt")


def aggregate_layer(scores, weights: WeightVector) -> float:
    """Weighted sum of six dimension scores; raises ConfigError on a bad
    weight vector (the WeightVector constructor enforces validity)."""
    values = list(scores)
    if len(values) != 6:
        raise ConfigError("aggregate_layer expects six dimension scores")
    if not isinstance(weights, WeightVector):
        weights = WeightVector(tuple(weights))
    return sum(w * s for w, s in zip(weights.weights, values))


def combine_scores(s_low: float, s_high: float, alpha: float = 0.5) -> CombinedScore:
    """Affine combination of the two layer scores."""
    for name, value in (("s_low", s_low), ("s_high", s_high), ("alpha", alpha)):
        if not (0.0 <= value <= 1.0):
            raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return CombinedScore(s_low=s_low, s_high=s_high, s_vis=alpha * s_low + (1 - alpha) * s_high, alpha=alpha)


def assess_candidate(
    spec: ChartSpec,
    data: DataTable,
    *,
    vlm=None,
    image: str | bytes | None = None,
    context: str = "",
    perceptual_pass_threshold: float = 0.0,
    trace: list | None = None,
) -> EvaluationReport:
    """In-loop assessment of a candidate spec against its own data.

    Validation problems become error-priority recommendations; when a vision
    model and rendered image are supplied, low perceptual dimensions add
    lower-priority suggestions.
    """
    report = validate_spec(spec, data)
    bundle = extract_features(spec)

    field_entries = [enc for _, enc in bundle.encodings if enc.field]
    missing = [d for d in report.errors() if d.code == "MissingField"]
    mismatched = [d for d in report.errors() if d.code == "TypeMismatch"]
    denominator = max(1, len(field_entries))

    structural = StructuralScores(
        chart_type=1.0,
        data_mapping=max(0.0, 1.0 - len(missing) / denominator),
        encoding=max(0.0, 1.0 - len(mismatched) / denominator),
        interaction=1.0,
        config=1.0,
        transform=1.0 if not any("transform" in d.path for d in report.errors()) else 0.0,
    )

    recommendations = [
        Recommendation(priority=i + 1, text=f"{d.path}: {d.message}", dimension=d.code)
        for i, d in enumerate(report.errors())
    ]
    notes = tuple(d.message for d in report.diagnostics if d.severity != "error")

    perceptual = None
    if vlm is not None and image is not None:
        perceptual = score_perceptual(image, context, vlm, trace)
        if perceptual.normalized() < perceptual_pass_threshold:
            base = len(recommendations)
            worst = sorted(
                zip(PERCEPTUAL_DIMENSIONS, perceptual.normalized_dimensions()), key=lambda kv: kv[1]
            )[:2]
            recommendations.extend(
                Recommendation(priority=base + i + 1, text=f"improve perceptual {name}", dimension=name)
                for i, (name, _) in enumerate(worst)
            )

    passed = report.valid and (
        perceptual is None or perceptual.normalized() >= perceptual_pass_threshold
    )
    return EvaluationReport(
        passed=passed,
        structural=structural,
        perceptual=perceptual,
        recommendations=tuple(recommendations),
        notes=notes,
    )
