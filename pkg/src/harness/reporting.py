"""Report assembly and rendering.

The structured sections are ground truth; the generated narrative is an
optional overlay whose paragraphs must each cite a context document id.
Canonical JSON (sorted keys, 6-decimal floats) is the authoritative byte
form; markdown and HTML are lossless projections of it.
"""

from __future__ import annotations

import html as html_mod
from dataclasses import dataclass, field

from .backends import GenerationBackend, load_template
from .canonical import canonical_json_bytes
from .errors import AgentError, BackendProtocolError, TransportError

SECTION_TITLES = (
    "Workplan Summary",
    "Retrieved Events",
    "Hazard Control Analysis",
    "Critical Failures",
    "Policy Mappings",
    "Overall Risk Profile",
)

RENDER_FORMATS = ("json", "markdown", "html")


class ReportError(Exception):
    pass


@dataclass
class NarrativeResult:
    text: str = ""
    flagged_paragraphs: list[int] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "flagged_paragraphs": list(self.flagged_paragraphs),
            "error": self.error,
        }


@dataclass
class VulnerabilityReport:
    report_id: str
    job_id: str
    version: int
    workplan_summary: dict
    retrieved_events: list[dict]
    hazard_control_analysis: dict
    critical_failures: list[dict]
    policy_mappings: dict
    overall_risk_profile: dict
    narrative: dict = field(default_factory=lambda: NarrativeResult().to_dict())

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "job_id": self.job_id,
            "version": self.version,
            "workplan_summary": self.workplan_summary,
            "retrieved_events": self.retrieved_events,
            "hazard_control_analysis": self.hazard_control_analysis,
            "critical_failures": self.critical_failures,
            "policy_mappings": self.policy_mappings,
            "overall_risk_profile": self.overall_risk_profile,
            "narrative": self.narrative,
        }


def _require(outputs: dict, stage: str) -> dict:
    if stage not in outputs:
        raise ReportError(f"missing stage output {stage!r}; job not ready for assembly")
    return outputs[stage]


def assemble(
    job_id: str,
    outputs: dict,
    version: int = 1,
    narrative: NarrativeResult | None = None,
    workplan_doc_id: str = "",
) -> VulnerabilityReport:
    """Deterministic assembly of the final report from stage outputs.

    Ordering: events by score descending, hazard rows alphabetical,
    failure modes by risk descending, policy matches by similarity
    descending. The risk profile is recomputed from the section contents,
    never copied.
    """
    summary = _require(outputs, "summarized")
    retrieval = _require(outputs, "retrieved")
    pairs = _require(outputs, "hazards_extracted")["pairs"]
    coverage = _require(outputs, "coverage_done")
    modes = _require(outputs, "fmea_done")["modes"]
    policies = _require(outputs, "policies_done")

    events = sorted(
        (
            {
                "doc_id": e["doc_id"],
                "score": float(e["score"]),
                "grade": e.get("grade"),
                "excluded": bool(e.get("excluded", False)),
            }
            for e in retrieval["events"]
        ),
        key=lambda e: (-e["score"], e["doc_id"]),
    )

    pairs_sorted = sorted(
        pairs, key=lambda p: ((p["hazard"] or "").casefold(), p["provenance_doc_id"])
    )
    coverage_sorted = {
        "covered": sorted(coverage["covered"], key=lambda e: e["hazard"].casefold()),
        "uncovered": sorted(coverage["uncovered"], key=str.casefold),
        "weak": sorted(coverage["weak"], key=lambda e: e["hazard"].casefold()),
    }
    modes_sorted = sorted(modes, key=lambda m: (-m["risk"], m["description"]))
    matches_sorted = sorted(
        policies["matches"], key=lambda m: (-m["sim"], m["subject_ref"], m["policy_id"])
    )

    hazards_total = (
        len(coverage_sorted["covered"])
        + len(coverage_sorted["uncovered"])
        + len(coverage_sorted["weak"])
    )
    profile = {
        "hazards_total": hazards_total,
        "hazards_uncovered": len(coverage_sorted["uncovered"]),
        "critical_modes": sum(1 for m in modes_sorted if m["critical"]),
        "max_risk": max((m["risk"] for m in modes_sorted), default=0),
    }

    summary_section = dict(summary)
    summary_section["workplan_doc_id"] = workplan_doc_id
    return VulnerabilityReport(
        report_id=f"{job_id}.v{version}",
        job_id=job_id,
        version=version,
        workplan_summary=summary_section,
        retrieved_events=events,
        hazard_control_analysis={"pairs": pairs_sorted, "coverage": coverage_sorted},
        critical_failures=modes_sorted,
        policy_mappings={"matches": matches_sorted, "unmapped": sorted(policies["unmapped"])},
        overall_risk_profile=profile,
        narrative=(narrative or NarrativeResult()).to_dict(),
    )


def generate_narrative(
    report: VulnerabilityReport,
    context_docs: list[str],
    context_texts: list[str],
    llm: GenerationBackend,
) -> NarrativeResult:
    """Generate the narrative overlay; every paragraph must cite a context
    doc_id (uncited paragraphs are flagged, never silently kept as fact).
    Backend failure leaves the report valid with the error recorded.
    """
    if not context_docs:
        raise ReportError("cannot generate a narrative from an empty context")
    skeleton = canonical_json_bytes(report.overall_risk_profile).decode("ascii")
    prompt = load_template("report_narrative").render(
        skeleton=skeleton,
        doc_ids=", ".join(context_docs),
        context="\n".join(context_texts),
    )
    try:
        text = llm.generate(prompt)
    except (TransportError, AgentError, BackendProtocolError) as exc:
        return NarrativeResult(error=f"narrative backend failure: {exc}")

    paragraphs = [p.strip() for p in text.split("\n\n") if p.strip()]
    flagged = [
        i for i, p in enumerate(paragraphs) if not any(d in p for d in context_docs)
    ]
    return NarrativeResult(text="\n\n".join(paragraphs), flagged_paragraphs=flagged)


# -- rendering ----------------------------------------------------------------


def render(report: VulnerabilityReport, fmt: str) -> bytes:
    if fmt == "json":
        return canonical_json_bytes(report.to_dict())
    if fmt == "markdown":
        return _render_markdown(report).encode("utf-8")
    if fmt == "html":
        return _render_html(report).encode("utf-8")
    raise ReportError(f"unknown render format {fmt!r}")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    if value is None:
        return "-"
    return str(value)


def _md_table(rows: list[dict], columns: list[str]) -> list[str]:
    if not rows:
        return ["(none)", ""]
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(row.get(c)) for c in columns) + " |")
    lines.append("")
    return lines


def _render_markdown(report: VulnerabilityReport) -> str:
    lines: list[str] = [
        "# Vulnerability Analysis Report",
        "",
        f"- report_id: {report.report_id}",
        f"- job_id: {report.job_id}",
        f"- version: {report.version}",
        "",
        f"## {SECTION_TITLES[0]}",
        "",
        f"- workplan_doc_id: {report.workplan_summary.get('workplan_doc_id', '-')}",
        f"- scope: {report.workplan_summary['scope']}",
        f"- components: {', '.join(report.workplan_summary['components']) or '-'}",
        f"- operational_context: {report.workplan_summary['operational_context']}",
        f"- controls_mentioned: {', '.join(report.workplan_summary['controls_mentioned']) or '-'}",
        "",
        f"## {SECTION_TITLES[1]}",
        "",
    ]
    lines += _md_table(report.retrieved_events, ["doc_id", "score", "grade", "excluded"])
    lines += [f"## {SECTION_TITLES[2]}", "", "### Extracted Pairs", ""]
    lines += _md_table(
        report.hazard_control_analysis["pairs"],
        ["hazard", "control", "provenance_doc_id", "confidence"],
    )
    coverage = report.hazard_control_analysis["coverage"]
    lines += ["### Coverage", ""]
    lines += ["Covered:", ""]
    lines += _md_table(coverage["covered"], ["hazard", "control", "match_score"])
    lines += ["Weak:", ""]
    lines += _md_table(coverage["weak"], ["hazard", "control", "match_score"])
    lines += ["Uncovered:", ""]
    lines += [f"- {h}" for h in coverage["uncovered"]] or ["(none)"]
    lines += ["", f"## {SECTION_TITLES[3]}", ""]
    lines += _md_table(
        report.critical_failures,
        ["description", "severity", "likelihood", "risk", "critical"],
    )
    for mode in report.critical_failures:
        lines.append(f"### {mode['description']}")
        lines.append(f"- causes: {'; '.join(mode['causes'])}")
        lines.append(f"- effects: {'; '.join(mode['effects'])}")
        lines.append(f"- mitigations: {'; '.join(mode['mitigations']) or '-'}")
        lines.append("")
    lines += [f"## {SECTION_TITLES[4]}", ""]
    lines += _md_table(
        report.policy_mappings["matches"], ["subject_ref", "policy_id", "sim", "excerpt"]
    )
    lines += ["Unmapped subjects:", ""]
    lines += [f"- {s}" for s in report.policy_mappings["unmapped"]] or ["(none)"]
    lines += ["", f"## {SECTION_TITLES[5]}", ""]
    for key in ("hazards_total", "hazards_uncovered", "critical_modes", "max_risk"):
        lines.append(f"- {key}: {report.overall_risk_profile[key]}")
    narrative = report.narrative
    if narrative.get("text") or narrative.get("error"):
        lines += ["", "### Narrative", ""]
        if narrative.get("error"):
            lines.append(f"(narrative unavailable: {narrative['error']})")
        else:
            lines.append(narrative["text"])
            if narrative["flagged_paragraphs"]:
                lines.append(
                    f"\nFlagged uncited paragraphs: {narrative['flagged_paragraphs']}"
                )
    lines.append("")
    return "\n".join(lines)


def _html_rows(rows: list[dict], columns: list[str]) -> str:
    if not rows:
        return "<p>(none)</p>"
    head = "".join(f"<th>{html_mod.escape(c)}</th>" for c in columns)
    body = "".join(
        "<tr>" + "".join(f"<td>{html_mod.escape(_fmt(row.get(c)))}</td>" for c in columns) + "</tr>"
        for row in rows
    )
    return f"<table><thead><tr>{head}</tr></thead><tbody>{body}</tbody></table>"


def _render_html(report: VulnerabilityReport) -> str:
    e = html_mod.escape
    coverage = report.hazard_control_analysis["coverage"]
    narrative = report.narrative
    parts = [
        "<!DOCTYPE html>",
        "<html><head><title>Vulnerability Analysis Report</title></head><body>",
        "<h1>Vulnerability Analysis Report</h1>",
        f"<p>report_id: {e(report.report_id)} | job_id: {e(report.job_id)} | version: {report.version}</p>",
        f"<h2>{SECTION_TITLES[0]}</h2>",
        f"<p>workplan_doc_id: {e(report.workplan_summary.get('workplan_doc_id', '-'))}</p>",
        f"<p>scope: {e(report.workplan_summary['scope'])}</p>",
        f"<p>components: {e(', '.join(report.workplan_summary['components']) or '-')}</p>",
        f"<p>operational_context: {e(report.workplan_summary['operational_context'])}</p>",
        f"<p>controls_mentioned: {e(', '.join(report.workplan_summary['controls_mentioned']) or '-')}</p>",
        f"<h2>{SECTION_TITLES[1]}</h2>",
        _html_rows(report.retrieved_events, ["doc_id", "score", "grade", "excluded"]),
        f"<h2>{SECTION_TITLES[2]}</h2>",
        "<h3>Extracted Pairs</h3>",
        _html_rows(
            report.hazard_control_analysis["pairs"],
            ["hazard", "control", "provenance_doc_id", "confidence"],
        ),
        "<h3>Coverage</h3>",
        "<h4>Covered</h4>",
        _html_rows(coverage["covered"], ["hazard", "control", "match_score"]),
        "<h4>Weak</h4>",
        _html_rows(coverage["weak"], ["hazard", "control", "match_score"]),
        "<h4>Uncovered</h4>",
        "<ul>" + "".join(f"<li>{e(h)}</li>" for h in coverage["uncovered"]) + "</ul>",
        f"<h2>{SECTION_TITLES[3]}</h2>",
        _html_rows(
            report.critical_failures,
            ["description", "causes", "effects", "severity", "likelihood", "risk", "critical", "mitigations"],
        ),
        f"<h2>{SECTION_TITLES[4]}</h2>",
        _html_rows(
            report.policy_mappings["matches"],
            ["subject_ref", "policy_id", "sim", "excerpt"],
        ),
        "<h4>Unmapped</h4>",
        "<ul>" + "".join(f"<li>{e(s)}</li>" for s in report.policy_mappings["unmapped"]) + "</ul>",
        f"<h2>{SECTION_TITLES[5]}</h2>",
        "<ul>"
        + "".join(
            f"<li>{key}: {report.overall_risk_profile[key]}</li>"
            for key in ("hazards_total", "hazards_uncovered", "critical_modes", "max_risk")
        )
        + "</ul>",
    ]
    if narrative.get("text") or narrative.get("error"):
        parts.append("<h3>Narrative</h3>")
        if narrative.get("error"):
            parts.append(f"<p>(narrative unavailable: {e(str(narrative['error']))})</p>")
        else:
            for para in narrative["text"].split("\n\n"):
                parts.append(f"<p>{e(para)}</p>")
    parts.append("</body></html>")
    return "\n".join(parts)


def parse_report(data: bytes | dict) -> VulnerabilityReport:
    """Rebuild a report object from its canonical JSON form."""
    import json

    raw = json.loads(data) if isinstance(data, (bytes, str)) else dict(data)
    return VulnerabilityReport(
        report_id=raw["report_id"],
        job_id=raw["job_id"],
        version=raw["version"],
        workplan_summary=raw["workplan_summary"],
        retrieved_events=raw["retrieved_events"],
        hazard_control_analysis=raw["hazard_control_analysis"],
        critical_failures=raw["critical_failures"],
        policy_mappings=raw["policy_mappings"],
        overall_risk_profile=raw["overall_risk_profile"],
        narrative=raw.get("narrative", NarrativeResult().to_dict()),
    )


def validate_provenance(report: VulnerabilityReport, store, policy_index) -> list[str]:
    """Every doc_id / policy_id referenced by the report must resolve.
    Returns the list of violations (empty when closed)."""
    problems = []
    for event in report.retrieved_events:
        if event["doc_id"] not in store:
            problems.append(f"unknown event doc {event['doc_id']}")
    for pair in report.hazard_control_analysis["pairs"]:
        doc_id = pair["provenance_doc_id"]
        if doc_id not in store and doc_id != report.workplan_summary.get("workplan_doc_id"):
            problems.append(f"unknown pair provenance {doc_id}")
    for match in report.policy_mappings["matches"]:
        if match["policy_id"] not in policy_index.policies:
            problems.append(f"unknown policy {match['policy_id']}")
    return problems
