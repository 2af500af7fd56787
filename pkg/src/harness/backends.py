"""Generation and cross-encoder backend contracts plus offline fixtures.

Remote contracts:
  generation     POST {"prompt": str}                 -> {"text": str}
  cross-encoder  POST {"query": str, "passages": []}  -> {"scores": []}

Offline fixtures keep the whole pipeline deterministic: a transcript
backend replays prompt-hash -> response mappings from a JSON file, and
``FixtureGenerationBackend`` computes plausible responses from prompt
content with fixed rules (used where transcripts cannot enumerate inputs,
e.g. randomized property suites and the golden pipeline).
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from string import Template
from typing import Protocol

from .canonical import sha256_hex
from .corpus import normalize, tokenize
from .embedding import fnv1a_64
from .errors import BackendProtocolError, TransportError

PROMPTS_DIR = Path(__file__).parent / "prompts"

_STOPWORDS = frozenset(
    "the a an and or of to in on for with is are be at by from this that".split()
)


class PromptTemplate:
    """A versioned prompt file; its digest is recorded in job traces."""

    def __init__(self, name: str, text: str):
        self.name = name
        self.text = text
        self.digest = sha256_hex(text)[:12]
        self.tag = text.splitlines()[0].strip()

    def render(self, **fields: str) -> str:
        return Template(self.text).substitute(**fields)


_TEMPLATE_CACHE: dict[str, PromptTemplate] = {}


def load_template(name: str) -> PromptTemplate:
    if name not in _TEMPLATE_CACHE:
        path = PROMPTS_DIR / f"{name}.txt"
        _TEMPLATE_CACHE[name] = PromptTemplate(name, path.read_text(encoding="utf-8"))
    return _TEMPLATE_CACHE[name]


def prompt_hash(prompt: str) -> str:
    return sha256_hex(prompt)[:16]


class GenerationBackend(Protocol):
    backend_id: str

    def generate(self, prompt: str) -> str: ...


class CrossEncoderBackend(Protocol):
    backend_id: str

    def score(self, query: str, passages: list[str]) -> list[float]: ...


# -- scripted / transcript fixtures ----------------------------------------


class TranscriptGenerationBackend:
    """Replays a scripted transcript file mapping prompt-hash -> response."""

    def __init__(self, transcript: str | Path | dict[str, str], backend_id: str = "transcript"):
        if isinstance(transcript, (str, Path)):
            transcript = json.loads(Path(transcript).read_text(encoding="utf-8"))
        self.responses = dict(transcript)
        self.backend_id = backend_id
        self.calls: list[str] = []

    def generate(self, prompt: str) -> str:
        self.calls.append(prompt)
        key = prompt_hash(prompt)
        if key not in self.responses:
            raise BackendProtocolError(
                f"transcript has no response for prompt hash {key} "
                f"(prompt head: {prompt.splitlines()[0]!r})"
            )
        return self.responses[key]


class ScriptedGenerationBackend:
    """Returns queued responses in order; exhaustion is a protocol error."""

    def __init__(self, responses: list[str], backend_id: str = "scripted"):
        self._queue = list(responses)
        self.backend_id = backend_id
        self.prompts: list[str] = []

    def generate(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self._queue:
            raise BackendProtocolError("scripted backend exhausted")
        return self._queue.pop(0)


class FailingGenerationBackend:
    """Always raises a retryable transport error."""

    backend_id = "failing"

    def generate(self, prompt: str) -> str:
        raise TransportError("generation backend unreachable")


class FlakyGenerationBackend:
    """Fails with TransportError ``fail_times`` times, then delegates."""

    def __init__(self, inner: GenerationBackend, fail_times: int):
        self.inner = inner
        self.remaining_failures = fail_times
        self.backend_id = f"flaky({inner.backend_id})"

    def generate(self, prompt: str) -> str:
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise TransportError("transient backend failure")
        return self.inner.generate(prompt)


class RemoteGenerationBackend:
    def __init__(self, url: str, backend_id: str = "remote-llm", client=None):
        import httpx

        self.url = url
        self.backend_id = backend_id
        self._client = client or httpx.Client(timeout=60.0)

    def generate(self, prompt: str) -> str:
        import httpx

        try:
            response = self._client.post(self.url, json={"prompt": prompt})
        except httpx.HTTPError as exc:
            raise TransportError(f"generation backend unreachable: {exc}") from exc
        if response.status_code >= 500:
            raise TransportError(f"generation backend error {response.status_code}")
        if response.status_code != 200:
            raise BackendProtocolError(f"generation backend rejected request: {response.text}")
        return response.json()["text"]


# -- deterministic content-rule fixture -------------------------------------


def _section(prompt: str, header: str) -> str:
    """Text following ``header`` up to the next ALL-CAPS header or EOF."""
    pattern = re.compile(
        rf"^{re.escape(header)}\s*(.*?)(?=^[A-Z][A-Z ]+:|\Z)", re.MULTILINE | re.DOTALL
    )
    match = pattern.search(prompt)
    return match.group(1).strip() if match else ""


def _listed_items(block: str) -> list[str]:
    return [line.lstrip("- ").strip() for line in block.splitlines() if line.strip()]


def _find_labeled_list(text: str, label: str) -> list[str]:
    """Parse ``Label: a, b, c`` occurrences out of free text."""
    match = re.search(rf"{label}\s*:\s*([^.;\n]+)", text, re.IGNORECASE)
    if not match:
        return []
    return [part.strip() for part in match.group(1).split(",") if part.strip()]


def _dedupe_casefold(items: list[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        key = item.casefold()
        if key not in seen:
            seen.add(key)
            out.append(item)
    return out


HAZARD_PATTERN = re.compile(
    r"hazard\s*:\s*(?P<hazard>[^;.\n]+?)\s*(?:;\s*control\s*:\s*(?P<control>[^;.\n]+))?(?:[;.\n]|$)",
    re.IGNORECASE,
)


def scan_hazard_patterns(text: str) -> list[dict]:
    """Literal ``hazard: X; control: Y`` scanner shared by the rule fallback
    and the fixture backend."""
    pairs = []
    for match in HAZARD_PATTERN.finditer(text):
        hazard = match.group("hazard").strip()
        control = (match.group("control") or "").strip() or None
        if hazard:
            pairs.append({"hazard": hazard, "control": control, "confidence": 0.9})
    return pairs


class FixtureGenerationBackend:
    """Offline stand-in for the generation model.

    Dispatches on the prompt template's tag line and computes the response
    from the prompt body with fixed rules, so identical inputs always yield
    identical outputs. Severity/likelihood come from an FNV hash of the
    mode description: varied but reproducible across platforms.
    """

    backend_id = "fixture-rules"

    def generate(self, prompt: str) -> str:
        tag = prompt.splitlines()[0].strip()
        handler = {
            "[decompose-query v1]": self._decompose,
            "[expand-subquery v1]": self._expand,
            "[extract-keywords v1]": self._keywords,
            "[summarize-workplan v1]": self._summarize,
            "[extract-hazard-pairs v1]": self._hazard_pairs,
            "[fmea-identify v1]": self._fmea_identify,
            "[fmea-causes v1]": self._fmea_causes,
            "[fmea-effects v1]": self._fmea_effects,
            "[report-narrative v1]": self._narrative,
            "[judge-criterion v1]": self._judge,
            "[qa-answer v1]": self._qa_answer,
        }.get(tag)
        if handler is None:
            raise BackendProtocolError(f"fixture backend has no rule for {tag!r}")
        return handler(prompt)

    def _decompose(self, prompt: str) -> str:
        query = _section(prompt, "QUERY:")
        clauses = [c.strip() for c in re.split(r"\band\b|;|\bthen\b", query) if c.strip()]
        return json.dumps(clauses if clauses else [query])

    def _expand(self, prompt: str) -> str:
        sub = _section(prompt, "SUBQUERY:")
        count_match = re.search(r"up to (\d+)", prompt)
        count = int(count_match.group(1)) if count_match else 3
        tokens = sub.split()
        variants = [
            " ".join(reversed(tokens)),       # same token bag: sim 1.0 to parent
            sub + " safety procedure",
            "incident involving " + sub,
        ]
        return json.dumps(variants[:count])

    def _keywords(self, prompt: str) -> str:
        text = _section(prompt, "TEXT:")
        count_match = re.search(r"List the (\d+)", prompt)
        count = int(count_match.group(1)) if count_match else 5
        counts: dict[str, int] = {}
        for token in tokenize(normalize(text)):
            low = token.lower()
            if low in _STOPWORDS or not low.isalnum() or len(low) < 3:
                continue
            counts[low] = counts.get(low, 0) + 1
        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        return json.dumps([term for term, _ in ranked[:count]])

    def _summarize(self, prompt: str) -> str:
        title = _section(prompt, "WORK PLAN TITLE:").splitlines()[0] if _section(prompt, "WORK PLAN TITLE:") else ""
        text = _section(prompt, "WORK PLAN TEXT:")
        first_sentence = re.split(r"(?<=[.!?])\s", text.strip(), maxsplit=1)[0]
        components = _find_labeled_list(text, "components")
        controls = _find_labeled_list(text, "controls")
        if not components:
            tokens = [t for t in tokenize(normalize(text)) if len(t) >= 5 and t.isalpha()]
            components = _dedupe_casefold(tokens)[:3]
        location = _find_labeled_list(text, "location")
        context = location[0] if location else (title or "general facility operations")
        return json.dumps(
            {
                "scope": first_sentence or title or "unspecified scope",
                "components": components,
                "operational_context": context,
                "controls_mentioned": controls,
            }
        )

    def _hazard_pairs(self, prompt: str) -> str:
        text = _section(prompt, "TEXT:")
        return json.dumps(scan_hazard_patterns(text))

    def _fmea_identify(self, prompt: str) -> str:
        hazards = _listed_items(_section(prompt, "HAZARDS:"))
        modes = [{"description": f"Uncontrolled {h}"} for h in hazards]
        return json.dumps(modes)

    def _fmea_causes(self, prompt: str) -> str:
        modes = _listed_items(_section(prompt, "MODES:"))
        return json.dumps(
            {
                m: [f"Procedure gap before {m.lower()}", f"Equipment degradation enabling {m.lower()}"]
                for m in modes
            }
        )

    def _fmea_effects(self, prompt: str) -> str:
        modes = _listed_items(_section(prompt, "MODES:"))
        out = {}
        for m in modes:
            h = fnv1a_64(m.encode("utf-8"))
            out[m] = {
                "effects": [f"Potential injury from {m.lower()}", f"Work stoppage after {m.lower()}"],
                "severity": 1 + (h % 5),
                "likelihood": 1 + ((h >> 8) % 5),
                "mitigations": [f"Add verification step addressing {m.lower()}"],
            }
        return json.dumps(out)

    def _narrative(self, prompt: str) -> str:
        ids_line = _section(prompt, "CONTEXT DOCS:").splitlines()
        doc_ids = [d.strip() for d in (ids_line[0] if ids_line else "").split(",") if d.strip()]
        paragraphs = [
            f"Historical event [{doc_id}] shows conditions similar to this work "
            "plan; the associated controls should be verified before release."
            for doc_id in doc_ids[:2]
        ]
        if not paragraphs:
            paragraphs = ["No comparable historical events were retrieved."]
        return "\n\n".join(paragraphs)

    def _judge(self, prompt: str) -> str:
        criterion_match = re.search(r"Criterion:\s*(\w+)", prompt)
        criterion = criterion_match.group(1) if criterion_match else "overall"
        score = 3 + (fnv1a_64(criterion.encode("utf-8")) % 3)
        return json.dumps(
            {"score": score, "justification": f"Deterministic fixture rating for {criterion}."}
        )

    def _qa_answer(self, prompt: str) -> str:
        context = _section(prompt, "CONTEXT:")
        return "Based on the retrieved records: " + " ".join(context.split())


# -- strict JSON envelope ----------------------------------------------------


def _parse_json_payload(text: str):
    """Parse a strict JSON payload, tolerating surrounding prose/fences."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    for opener, closer in (("{", "}"), ("[", "]")):
        start = text.find(opener)
        end = text.rfind(closer)
        if start != -1 and end > start:
            try:
                return json.loads(text[start : end + 1])
            except json.JSONDecodeError:
                continue
    raise BackendProtocolError(f"not valid JSON: {text[:80]!r}")


def generate_json(llm: GenerationBackend, prompt: str, validator=None):
    """Call the backend expecting strict JSON; repair once, then fail.

    Returns (payload, attempts) where attempts is 1 for a clean parse and 2
    when the repair prompt was needed. ``validator`` may raise ValueError to
    reject a structurally valid but contract-breaking payload.
    """
    from .errors import AgentError

    reply = llm.generate(prompt)
    for attempt in (1, 2):
        try:
            payload = _parse_json_payload(reply)
            if validator is not None:
                validator(payload)
            return payload, attempt
        except (BackendProtocolError, ValueError) as exc:
            if attempt == 2:
                raise AgentError(f"unparseable backend reply after repair: {exc}") from exc
            repair = load_template("repair_json").render(previous=reply)
            reply = llm.generate(repair)
    raise AssertionError("unreachable")


# -- cross-encoder fixtures --------------------------------------------------


class JaccardCrossEncoder:
    """Mock reranker: token-set Jaccard similarity of query and passage."""

    backend_id = "mock-jaccard"

    def score(self, query: str, passages: list[str]) -> list[float]:
        query_tokens = {t.lower() for t in tokenize(normalize(query))}
        scores = []
        for passage in passages:
            passage_tokens = {t.lower() for t in tokenize(normalize(passage))}
            union = query_tokens | passage_tokens
            inter = query_tokens & passage_tokens
            scores.append(len(inter) / len(union) if union else 0.0)
        return scores


class FailingCrossEncoder:
    backend_id = "failing-cross"

    def score(self, query: str, passages: list[str]) -> list[float]:
        raise TransportError("cross-encoder unreachable")


class RemoteCrossEncoder:
    def __init__(self, url: str, backend_id: str = "remote-cross", client=None):
        import httpx

        self.url = url
        self.backend_id = backend_id
        self._client = client or httpx.Client(timeout=60.0)

    def score(self, query: str, passages: list[str]) -> list[float]:
        import httpx

        try:
            response = self._client.post(
                self.url, json={"query": query, "passages": passages}
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"cross-encoder unreachable: {exc}") from exc
        if response.status_code >= 500:
            raise TransportError(f"cross-encoder error {response.status_code}")
        if response.status_code != 200:
            raise BackendProtocolError(f"cross-encoder rejected request: {response.text}")
        scores = response.json()["scores"]
        if len(scores) != len(passages):
            raise BackendProtocolError("cross-encoder returned wrong score count")
        return [float(s) for s in scores]
