"""Analysis agents: work-plan summarization, hazard-control extraction,
coverage matching, FMEA synthesis, and policy alignment.

Every agent talks to its backend through a strict JSON envelope with one
automatic repair retry; a reply that still cannot be parsed (or that
breaks a type invariant) raises :class:`AgentError`. All agents are
deterministic under fixture backends.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends import (
    GenerationBackend,
    generate_json,
    load_template,
    scan_hazard_patterns,
)
from .corpus import ChunkingPolicy, Document, PolicyDocument, chunk, normalize
from .embedding import EmbeddingBackend, VectorIndex, cosine
from .errors import AgentError, TransportError

COVERED_THRESHOLD = 0.6
WEAK_THRESHOLD = 0.4
POLICY_MATCH_THRESHOLD = 0.55
CRITICAL_RISK_THRESHOLD = 12


@dataclass(frozen=True)
class WorkPlanSummary:
    scope: str
    components: list[str]
    operational_context: str
    controls_mentioned: list[str]

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "components": list(self.components),
            "operational_context": self.operational_context,
            "controls_mentioned": list(self.controls_mentioned),
        }


@dataclass(frozen=True)
class HazardControlPair:
    hazard: str
    control: str | None
    provenance_doc_id: str
    confidence: float

    def to_dict(self) -> dict:
        return {
            "hazard": self.hazard,
            "control": self.control,
            "provenance_doc_id": self.provenance_doc_id,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class CoverageEntry:
    hazard: str
    control: str
    match_score: float

    def to_dict(self) -> dict:
        return {"hazard": self.hazard, "control": self.control, "match_score": self.match_score}


@dataclass(frozen=True)
class CoverageReport:
    covered: list[CoverageEntry]
    uncovered: list[str]
    weak: list[CoverageEntry]

    def all_hazards(self) -> list[str]:
        return [e.hazard for e in self.covered] + list(self.uncovered) + [
            e.hazard for e in self.weak
        ]

    def to_dict(self) -> dict:
        return {
            "covered": [e.to_dict() for e in self.covered],
            "uncovered": list(self.uncovered),
            "weak": [e.to_dict() for e in self.weak],
        }


@dataclass(frozen=True)
class FailureMode:
    description: str
    causes: list[str]
    effects: list[str]
    severity: int
    likelihood: int
    risk: int
    critical: bool
    mitigations: list[str]

    def validate(self, critical_threshold: int = CRITICAL_RISK_THRESHOLD) -> None:
        if not (1 <= self.severity <= 5 and 1 <= self.likelihood <= 5):
            raise ValueError("severity and likelihood must be integers in 1..5")
        if self.risk != self.severity * self.likelihood:
            raise ValueError("risk must equal severity * likelihood")
        if self.critical != (self.risk >= critical_threshold):
            raise ValueError("critical flag inconsistent with risk threshold")
        if not self.causes or not self.effects:
            raise ValueError("causes and effects must be non-empty")
        if self.critical and not self.mitigations:
            raise ValueError("critical failure modes require mitigations")

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "causes": list(self.causes),
            "effects": list(self.effects),
            "severity": self.severity,
            "likelihood": self.likelihood,
            "risk": self.risk,
            "critical": self.critical,
            "mitigations": list(self.mitigations),
        }


@dataclass(frozen=True)
class PolicyMatch:
    subject_ref: str
    policy_id: str
    sim: float
    excerpt: str

    def to_dict(self) -> dict:
        return {
            "subject_ref": self.subject_ref,
            "policy_id": self.policy_id,
            "sim": self.sim,
            "excerpt": self.excerpt,
        }


@dataclass(frozen=True)
class PolicyMatchResult:
    matches: list[PolicyMatch]
    unmapped: list[str]


def _dedupe_casefold(items: list[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        key = item.casefold()
        if key and key not in seen:
            seen.add(key)
            out.append(item)
    return out


def _note_repairs(meta: dict | None, attempts: int) -> None:
    if meta is not None and attempts > 1:
        meta["repairs"] = meta.get("repairs", 0) + (attempts - 1)


def _note_template(meta: dict | None, name: str) -> None:
    """Record the versioned template digest for the audit trace."""
    if meta is None:
        return
    tag = f"{name}:{load_template(name).digest}"
    templates = meta.setdefault("templates", [])
    if tag not in templates:
        templates.append(tag)


# -- summarization ------------------------------------------------------------


def summarize(
    workplan: Document, llm: GenerationBackend, meta: dict | None = None
) -> WorkPlanSummary:
    """Structured summary of a work plan: scope, components, context, controls."""
    text = normalize(" ".join(p for p in (workplan.summary, workplan.body) if p))
    if not text:
        raise AgentError("work plan has no text to summarize")
    prompt = load_template("summarize_workplan").render(
        title=normalize(workplan.event_name), text=text
    )
    _note_template(meta, "summarize_workplan")

    def check(payload) -> None:
        if not isinstance(payload, dict):
            raise ValueError("summary must be a JSON object")
        if not str(payload.get("scope", "")).strip():
            raise ValueError("summary scope must be non-empty")
        for key in ("components", "controls_mentioned"):
            if not isinstance(payload.get(key, []), list):
                raise ValueError(f"summary {key} must be an array")

    payload, attempts = generate_json(llm, prompt, validator=check)
    _note_repairs(meta, attempts)
    return WorkPlanSummary(
        scope=normalize(str(payload["scope"])),
        components=_dedupe_casefold([normalize(str(c)) for c in payload.get("components", [])]),
        operational_context=normalize(str(payload.get("operational_context", ""))),
        controls_mentioned=_dedupe_casefold(
            [normalize(str(c)) for c in payload.get("controls_mentioned", [])]
        ),
    )


# -- hazard-control extraction -------------------------------------------------


def _rule_pairs(text: str, provenance: str) -> list[HazardControlPair]:
    return [
        HazardControlPair(
            hazard=normalize(p["hazard"]),
            control=normalize(p["control"]) if p["control"] else None,
            provenance_doc_id=provenance,
            confidence=p["confidence"],
        )
        for p in scan_hazard_patterns(text)
    ]


def extract_pairs(
    text: str,
    provenance: str,
    llm: GenerationBackend | None,
    meta: dict | None = None,
) -> list[HazardControlPair]:
    """Extract hazard-control pairs with provenance.

    Backend-extracted pairs are validated (non-empty hazard, confidence in
    [0,1]); when the backend is absent or fails, a literal
    ``hazard:``/``control:`` pattern scan keeps the pipeline alive offline.
    An empty result is valid.
    """
    if not normalize(text):
        raise AgentError("cannot extract hazards from empty text")

    if llm is None:
        return _rule_pairs(text, provenance)

    prompt = load_template("extract_hazard_pairs").render(text=normalize(text))
    _note_template(meta, "extract_hazard_pairs")

    def check(payload) -> None:
        if not isinstance(payload, list):
            raise ValueError("pair reply must be a JSON array")

    try:
        payload, attempts = generate_json(llm, prompt, validator=check)
    except (TransportError, AgentError):
        if meta is not None:
            meta["fallback"] = "rule-pattern extraction"
        return _rule_pairs(text, provenance)
    _note_repairs(meta, attempts)

    pairs: list[HazardControlPair] = []
    for entry in payload:
        if not isinstance(entry, dict):
            continue
        hazard = normalize(str(entry.get("hazard", "")))
        confidence = entry.get("confidence")
        if not hazard or not isinstance(confidence, (int, float)):
            continue
        if not (0.0 <= float(confidence) <= 1.0):
            continue
        control = entry.get("control")
        pairs.append(
            HazardControlPair(
                hazard=hazard,
                control=normalize(str(control)) if control else None,
                provenance_doc_id=provenance,
                confidence=float(confidence),
            )
        )
    return pairs


# -- coverage matching ---------------------------------------------------------


def match_coverage(
    hazards: list[str],
    plan_controls: list[str],
    embedder: EmbeddingBackend,
    covered_threshold: float = COVERED_THRESHOLD,
    weak_threshold: float = WEAK_THRESHOLD,
) -> CoverageReport:
    """Partition hazards by how well the plan's controls address them.

    Each hazard pairs with its argmax-cosine control; scores at or above
    ``covered_threshold`` are covered, scores in [weak, covered) are weak,
    the rest uncovered. The three lists always partition the hazard set.
    """
    hazards = _dedupe_casefold([normalize(h) for h in hazards])
    controls = [normalize(c) for c in plan_controls if normalize(c)]
    covered: list[CoverageEntry] = []
    weak: list[CoverageEntry] = []
    uncovered: list[str] = []

    control_vecs = [(c, embedder.embed(c)) for c in controls]
    for hazard in hazards:
        if not control_vecs:
            uncovered.append(hazard)
            continue
        hazard_vec = embedder.embed(hazard)
        best_control, best_score = None, float("-inf")
        for control, vec in control_vecs:
            score = cosine(hazard_vec, vec)
            if score > best_score:
                best_control, best_score = control, score
        score = min(1.0, max(0.0, best_score))
        if score >= covered_threshold:
            covered.append(CoverageEntry(hazard, best_control, score))
        elif score >= weak_threshold:
            weak.append(CoverageEntry(hazard, best_control, score))
        else:
            uncovered.append(hazard)
    return CoverageReport(covered=covered, uncovered=uncovered, weak=weak)


# -- FMEA ---------------------------------------------------------------------


def _bullets(items: list[str]) -> str:
    return "\n".join(f"- {item}" for item in items)


def run_fmea(
    summary: WorkPlanSummary,
    hazards: list[str],
    llm: GenerationBackend,
    critical_threshold: int = CRITICAL_RISK_THRESHOLD,
    meta: dict | None = None,
) -> list[FailureMode]:
    """Three-stage FMEA: identify modes, analyze causes, analyze effects.

    Severity and likelihood come from the backend (1-5 integers); risk is
    computed locally as their product, the critical flag from
    ``critical_threshold``. Output sorted by risk descending.
    """
    hazards = _dedupe_casefold([normalize(h) for h in hazards])
    if not hazards:
        return []

    for name in ("fmea_identify", "fmea_causes", "fmea_effects"):
        _note_template(meta, name)
    identify_prompt = load_template("fmea_identify").render(
        scope=summary.scope, hazards=_bullets(hazards)
    )

    def check_modes(payload) -> None:
        if not isinstance(payload, list):
            raise ValueError("failure modes must be a JSON array")
        for entry in payload:
            if not isinstance(entry, dict) or not str(entry.get("description", "")).strip():
                raise ValueError("each failure mode needs a non-empty description")

    raw_modes, attempts = generate_json(llm, identify_prompt, validator=check_modes)
    _note_repairs(meta, attempts)
    descriptions = _dedupe_casefold([normalize(str(m["description"])) for m in raw_modes])
    if not descriptions:
        return []

    causes_prompt = load_template("fmea_causes").render(modes=_bullets(descriptions))

    def check_causes(payload) -> None:
        if not isinstance(payload, dict):
            raise ValueError("causes must be a JSON object keyed by mode description")
        for description in descriptions:
            causes = payload.get(description)
            if not isinstance(causes, list) or not causes:
                raise ValueError(f"missing causes for mode {description!r}")

    causes_map, attempts = generate_json(llm, causes_prompt, validator=check_causes)
    _note_repairs(meta, attempts)

    effects_prompt = load_template("fmea_effects").render(modes=_bullets(descriptions))

    def check_effects(payload) -> None:
        if not isinstance(payload, dict):
            raise ValueError("effects must be a JSON object keyed by mode description")
        for description in descriptions:
            entry = payload.get(description)
            if not isinstance(entry, dict):
                raise ValueError(f"missing effects entry for mode {description!r}")
            severity, likelihood = entry.get("severity"), entry.get("likelihood")
            if not isinstance(severity, int) or not isinstance(likelihood, int):
                raise ValueError("severity and likelihood must be integers")
            if not (1 <= severity <= 5 and 1 <= likelihood <= 5):
                raise ValueError("severity and likelihood must be in 1..5")
            if not isinstance(entry.get("effects"), list) or not entry["effects"]:
                raise ValueError(f"effects list empty for mode {description!r}")
            if severity * likelihood >= critical_threshold and not entry.get("mitigations"):
                raise ValueError(f"critical mode {description!r} lacks mitigations")

    effects_map, attempts = generate_json(llm, effects_prompt, validator=check_effects)
    _note_repairs(meta, attempts)

    modes: list[FailureMode] = []
    for description in descriptions:
        entry = effects_map[description]
        severity = int(entry["severity"])
        likelihood = int(entry["likelihood"])
        risk = severity * likelihood
        mode = FailureMode(
            description=description,
            causes=[normalize(str(c)) for c in causes_map[description]],
            effects=[normalize(str(e)) for e in entry["effects"]],
            severity=severity,
            likelihood=likelihood,
            risk=risk,
            critical=risk >= critical_threshold,
            mitigations=[normalize(str(m)) for m in entry.get("mitigations", [])],
        )
        mode.validate(critical_threshold)
        modes.append(mode)
    modes.sort(key=lambda m: (-m.risk, m.description))
    return modes


# -- policy alignment -----------------------------------------------------------


class PolicyIndex:
    """Embedded policy corpus: chunk vectors plus chunk -> policy mapping."""

    def __init__(
        self,
        policies: list[PolicyDocument],
        embedder: EmbeddingBackend,
        chunking: ChunkingPolicy | None = None,
    ):
        self.policies = {p.policy_id: p for p in policies}
        self.embedder = embedder
        self._chunk_texts: dict[str, str] = {}
        self._chunk_policy: dict[str, str] = {}
        entries = []
        for policy in policies:
            host = Document(doc_id=policy.policy_id, event_name=policy.title, body=policy.body)
            for piece in chunk(host, chunking or ChunkingPolicy()):
                entries.append((piece.chunk_id, embedder.embed(piece.text)))
                self._chunk_texts[piece.chunk_id] = piece.text
                self._chunk_policy[piece.chunk_id] = policy.policy_id
        self.index = VectorIndex.build(entries, embedder.descriptor)

    def __len__(self) -> int:
        return len(self.policies)

    def best_per_policy(self, subject_vec) -> dict[str, tuple[float, str]]:
        """Best (score, excerpt) per policy for a subject embedding."""
        best: dict[str, tuple[float, str]] = {}
        for chunk_id, score in self.index.scores(subject_vec).items():
            policy_id = self._chunk_policy[chunk_id]
            if policy_id not in best or score > best[policy_id][0]:
                best[policy_id] = (score, self._chunk_texts[chunk_id])
        return best


def match_policies(
    subjects: list[str],
    policy_index: PolicyIndex,
    threshold: float = POLICY_MATCH_THRESHOLD,
) -> PolicyMatchResult:
    """Map each subject (hazard or mitigation text) to every policy whose
    best chunk clears the threshold; subjects with no match are reported
    in the unmapped list, never dropped."""
    matches: list[PolicyMatch] = []
    unmapped: list[str] = []
    for subject in subjects:
        subject_text = normalize(subject)
        if not subject_text:
            continue
        if len(policy_index) == 0:
            unmapped.append(subject_text)
            continue
        vec = policy_index.embedder.embed(subject_text)
        scored = [
            (policy_id, min(1.0, score), excerpt)
            for policy_id, (score, excerpt) in policy_index.best_per_policy(vec).items()
            if score >= threshold
        ]
        if not scored:
            unmapped.append(subject_text)
            continue
        scored.sort(key=lambda item: (-item[1], item[0]))
        matches.extend(
            PolicyMatch(subject_ref=subject_text, policy_id=pid, sim=sim, excerpt=excerpt)
            for pid, sim, excerpt in scored
        )
    return PolicyMatchResult(matches=matches, unmapped=unmapped)
