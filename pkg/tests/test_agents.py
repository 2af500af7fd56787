from __future__ import annotations

import json
import math

import pytest

from harness.agents import (
    FailureMode,
    PolicyIndex,
    WorkPlanSummary,
    extract_pairs,
    match_coverage,
    match_policies,
    run_fmea,
    summarize,
)
from harness.backends import (
    FailingGenerationBackend,
    FixtureGenerationBackend,
    ScriptedGenerationBackend,
    TranscriptGenerationBackend,
    prompt_hash,
)
from harness.corpus import Document, PolicyDocument
from harness.embedding import MockEmbeddingBackend
from harness.errors import AgentError

WORKPLAN = Document(
    doc_id="wp-1",
    event_name="Pump seal replacement",
    summary="Replace the mechanical seal on cooling pump 3.",
    body="Scope includes drain and isolation. Components: pump, seal, wrench. Controls: lockout-tagout.",
)

CANNED_SUMMARY = json.dumps(
    {
        "scope": "Replace the mechanical seal",
        "components": ["Pump", "Seal", "Wrench"],
        "operational_context": "cooling pump room",
        "controls_mentioned": ["lockout-tagout"],
    }
)


# -- summarize -------------------------------------------------------------------


def test_summarize_parses_canned_summary():
    llm = ScriptedGenerationBackend([CANNED_SUMMARY])
    summary = summarize(WORKPLAN, llm)
    assert summary.scope == "Replace the mechanical seal"
    assert len(summary.components) == 3


def test_summarize_dedupes_components_case_insensitively():
    payload = json.dumps(
        {
            "scope": "x",
            "components": ["Crane", "crane", "Hoist"],
            "operational_context": "",
            "controls_mentioned": [],
        }
    )
    summary = summarize(WORKPLAN, ScriptedGenerationBackend([payload]))
    assert summary.components == ["Crane", "Hoist"]


def test_summarize_repair_then_success_notes_one_repair():
    llm = ScriptedGenerationBackend(["this is prose, not JSON", CANNED_SUMMARY])
    meta: dict = {}
    summary = summarize(WORKPLAN, llm, meta)
    assert summary.scope
    assert meta["repairs"] == 1
    # the second call used the repair template
    assert "repair-json" in llm.prompts[1]


def test_summarize_unparseable_after_repair_errors():
    llm = ScriptedGenerationBackend(["prose", "more prose"])
    with pytest.raises(AgentError):
        summarize(WORKPLAN, llm)


def test_summarize_transcript_backend():
    from harness.backends import load_template
    from harness.corpus import normalize

    text = normalize(" ".join([WORKPLAN.summary, WORKPLAN.body]))
    prompt = load_template("summarize_workplan").render(
        title=normalize(WORKPLAN.event_name), text=text
    )
    transcript = {prompt_hash(prompt): CANNED_SUMMARY}
    summary = summarize(WORKPLAN, TranscriptGenerationBackend(transcript))
    assert summary.components == ["Pump", "Seal", "Wrench"]


# -- extract_pairs ------------------------------------------------------------------


def test_extract_pairs_rule_fallback_pattern():
    pairs = extract_pairs(
        "hazard: arc flash; control: lockout-tagout", "doc-9", llm=None
    )
    assert len(pairs) == 1
    assert pairs[0].hazard == "arc flash"
    assert pairs[0].control == "lockout-tagout"
    assert pairs[0].provenance_doc_id == "doc-9"


def test_extract_pairs_empty_backend_result():
    llm = ScriptedGenerationBackend([json.dumps([])])
    assert extract_pairs("routine inspection text", "doc-1", llm) == []


def test_extract_pairs_scripted_two_pairs():
    payload = json.dumps(
        [
            {"hazard": "arc flash", "control": "lockout-tagout", "confidence": 0.9},
            {"hazard": "stored energy", "control": None, "confidence": 0.7},
        ]
    )
    pairs = extract_pairs("narrative text", "evt-3", ScriptedGenerationBackend([payload]))
    assert [(p.hazard, p.control) for p in pairs] == [
        ("arc flash", "lockout-tagout"),
        ("stored energy", None),
    ]
    assert all(p.provenance_doc_id == "evt-3" for p in pairs)


def test_extract_pairs_backend_failure_uses_rules():
    meta: dict = {}
    pairs = extract_pairs(
        "hazard: pinch point; control: guarding", "evt-1", FailingGenerationBackend(), meta
    )
    assert [(p.hazard, p.control) for p in pairs] == [("pinch point", "guarding")]
    assert "fallback" in meta


def test_extract_pairs_drops_invalid_entries():
    payload = json.dumps(
        [
            {"hazard": "", "confidence": 0.9},
            {"hazard": "valid hazard", "confidence": 1.5},
            {"hazard": "kept hazard", "confidence": 0.8},
        ]
    )
    pairs = extract_pairs("text", "d", ScriptedGenerationBackend([payload]))
    assert [p.hazard for p in pairs] == ["kept hazard"]


# -- match_coverage ------------------------------------------------------------------


def test_coverage_no_controls_all_uncovered():
    embedder = MockEmbeddingBackend(dim=64)
    report = match_coverage(["arc flash"], [], embedder)
    assert report.uncovered == ["arc flash"]
    assert not report.covered and not report.weak


def test_coverage_identical_text_scores_one():
    embedder = MockEmbeddingBackend(dim=64)
    report = match_coverage(["lockout tagout"], ["lockout tagout"], embedder)
    assert len(report.covered) == 1
    assert report.covered[0].match_score == pytest.approx(1.0, abs=1e-9)


def test_coverage_partition_matches_hand_cosine_table():
    # hand table (mock embedder bag-of-words):
    #   "arc flash" vs "arc flash training": 2/(sqrt2*sqrt3) = 0.816 -> covered
    #   "chemical spill cleanup required" vs "chemical spill kit deployment procedure":
    #       2/(2*sqrt5) = 0.447 -> weak
    #   "falling load" vs both controls: 0 shared tokens -> uncovered
    embedder = MockEmbeddingBackend(dim=64)
    hazards = ["arc flash", "chemical spill cleanup required", "falling load"]
    controls = ["arc flash training", "chemical spill kit deployment procedure"]
    report = match_coverage(hazards, controls, embedder)
    assert [e.hazard for e in report.covered] == ["arc flash"]
    assert report.covered[0].control == "arc flash training"
    assert report.covered[0].match_score == pytest.approx(2 / (math.sqrt(2) * math.sqrt(3)), abs=1e-9)
    assert [e.hazard for e in report.weak] == ["chemical spill cleanup required"]
    assert report.weak[0].match_score == pytest.approx(2 / (2 * math.sqrt(5)), abs=1e-9)
    assert report.uncovered == ["falling load"]
    # partition property
    assert sorted(report.all_hazards()) == sorted(hazards)


# -- run_fmea ---------------------------------------------------------------------


def fmea_scripts(modes: dict[str, tuple[int, int]], mitigations=("fit check",)):
    """Build the three scripted stage replies for given {mode: (sev, lik)}."""
    stage1 = json.dumps([{"description": d} for d in modes])
    stage2 = json.dumps({d: [f"cause of {d}"] for d in modes})
    stage3 = json.dumps(
        {
            d: {
                "effects": [f"effect of {d}"],
                "severity": sev,
                "likelihood": lik,
                "mitigations": list(mitigations),
            }
            for d, (sev, lik) in modes.items()
        }
    )
    return [stage1, stage2, stage3]


SUMMARY = WorkPlanSummary(
    scope="replace seal", components=["pump"], operational_context="", controls_mentioned=[]
)


def test_fmea_risk_product_and_critical_flag():
    llm = ScriptedGenerationBackend(fmea_scripts({"Seal ejection": (4, 4)}))
    modes = run_fmea(SUMMARY, ["seal failure"], llm)
    assert modes[0].risk == 16
    assert modes[0].critical is True  # threshold 12


def test_fmea_below_threshold_not_critical():
    llm = ScriptedGenerationBackend(fmea_scripts({"Minor drip": (2, 2)}))
    modes = run_fmea(SUMMARY, ["drip"], llm)
    assert modes[0].risk == 4
    assert modes[0].critical is False


def test_fmea_sorted_by_risk_descending():
    llm = ScriptedGenerationBackend(
        fmea_scripts({"Mode B": (3, 3), "Mode A": (4, 5)})
    )
    modes = run_fmea(SUMMARY, ["h1", "h2"], llm)
    assert [m.risk for m in modes] == [20, 9]


def test_fmea_unparseable_twice_is_agent_error():
    llm = ScriptedGenerationBackend(["prose", "still prose"])
    with pytest.raises(AgentError):
        run_fmea(SUMMARY, ["hazard"], llm)


def test_fmea_critical_without_mitigations_rejected():
    scripts = fmea_scripts({"Bad mode": (5, 5)}, mitigations=())
    # one repair attempt happens, then the same invalid payload -> error
    llm = ScriptedGenerationBackend([scripts[0], scripts[1], scripts[2], scripts[2]])
    with pytest.raises(AgentError):
        run_fmea(SUMMARY, ["hazard"], llm)


def test_fmea_no_hazards_no_modes():
    assert run_fmea(SUMMARY, [], ScriptedGenerationBackend([])) == []


def test_fmea_fixture_backend_deterministic():
    llm = FixtureGenerationBackend()
    first = run_fmea(SUMMARY, ["arc flash", "dropped load"], llm)
    second = run_fmea(SUMMARY, ["arc flash", "dropped load"], llm)
    assert [m.to_dict() for m in first] == [m.to_dict() for m in second]
    for mode in first:
        mode.validate()
        assert mode.risk == mode.severity * mode.likelihood


def test_failure_mode_validate_rejects_inconsistent():
    mode = FailureMode(
        description="x",
        causes=["c"],
        effects=["e"],
        severity=4,
        likelihood=4,
        risk=15,  # wrong product
        critical=True,
        mitigations=["m"],
    )
    with pytest.raises(ValueError):
        mode.validate()


# -- match_policies ------------------------------------------------------------------


def make_policy_index():
    embedder = MockEmbeddingBackend(dim=64)
    policies = [
        PolicyDocument("pol-1", "Energy isolation", "lockout tagout energy isolation"),
        PolicyDocument("pol-2", "Lockout verification", "lockout tagout verification steps"),
        PolicyDocument("pol-3", "Crane ops", "crane rigging inspection"),
        PolicyDocument("pol-4", "Acid handling", "acid neutralizer handling"),
        PolicyDocument("pol-5", "Fall protection", "fall protection harness anchor"),
    ]
    return PolicyIndex(policies, embedder)


def test_policy_self_match_verbatim_excerpt():
    index = make_policy_index()
    result = match_policies(["lockout tagout energy isolation"], index)
    top = result.matches[0]
    assert top.policy_id == "pol-1"
    assert top.sim == pytest.approx(1.0, abs=1e-9)
    assert top.excerpt == "lockout tagout energy isolation"
    assert top.excerpt in index.policies["pol-1"].body


def test_policy_nonsense_subject_unmapped():
    index = make_policy_index()
    # oracle: the nonsense tokens appear in no policy, so every cosine is 0 < 0.55
    result = match_policies(["zxqv wvut phantasmal"], index)
    assert result.matches == []
    assert result.unmapped == ["zxqv wvut phantasmal"]


def test_policy_two_of_five_matched_sorted():
    # hand table: subject "lockout tagout verification"
    #   vs pol-2 body (4 tokens, 3 shared): 3/(sqrt3*2) = 0.866 >= 0.55
    #   vs pol-1 body (4 tokens, 2 shared): 2/(sqrt3*2) = 0.577 >= 0.55
    #   vs pol-3/4/5: no shared tokens -> 0
    index = make_policy_index()
    result = match_policies(["lockout tagout verification"], index)
    assert [(m.policy_id, round(m.sim, 3)) for m in result.matches] == [
        ("pol-2", round(3 / (math.sqrt(3) * 2), 3)),
        ("pol-1", round(2 / (math.sqrt(3) * 2), 3)),
    ]
    assert result.unmapped == []


def test_policy_empty_corpus_all_unmapped():
    embedder = MockEmbeddingBackend(dim=64)
    index = PolicyIndex([], embedder)
    result = match_policies(["anything"], index)
    assert result.matches == []
    assert result.unmapped == ["anything"]


def test_policy_excerpts_always_verbatim_substrings():
    index = make_policy_index()
    subjects = ["lockout tagout verification", "crane rigging", "fall protection harness"]
    result = match_policies(subjects, index)
    assert result.matches
    for match in result.matches:
        assert match.excerpt in index.policies[match.policy_id].body
        assert match.sim >= 0.55
