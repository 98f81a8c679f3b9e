"""OCR-routed construction of instruction-relevant region annotations.

Each QA record goes down exactly one route:

* ``unique``   the answer text occurs once in the OCR output; use that box.
* ``multiple`` it occurs several times; an LLM picks one candidate.
* ``grounded`` it does not occur; a VLM proposes a box on the image.
* ``manual``   any client failure or invalid response; left for a human.

The ``rationale`` variant additionally asks an LLM for evidence phrases and
localizes each one in the OCR output as an evidence box.
"""
from __future__ import annotations

import csv
import json
import logging
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .clients import OcrDocument, ServiceClients
from .grid import BoxPx, GtAnnotation, union_box

log = logging.getLogger(__name__)

CASES = ("unique", "multiple", "grounded", "manual")
CASE_LABELS = {
    "grounded": "Visually Grounded",
    "unique": "OCR-Extractable (Unique)",
    "multiple": "OCR-Extractable (Multiple)",
    "manual": "Manual Annotation",
}
VARIANTS = ("plain", "rationale")


@dataclass
class QaRecord:
    question_id: str
    image_id: str
    question: str
    answers: list[str]

    def __post_init__(self):
        if not self.answers:
            raise ValueError(f"record {self.question_id} has no answers")

    @classmethod
    def from_dict(cls, d: dict) -> "QaRecord":
        return cls(str(d["question_id"]), str(d["image_id"]), str(d["question"]), [str(a) for a in d["answers"]])


@dataclass
class RoutingOutcome:
    question_id: str
    image_id: str
    case: str
    annotation: GtAnnotation | None = None
    reason: str = ""

    @property
    def completed(self) -> bool:
        return self.annotation is not None

    def to_dict(self) -> dict:
        if self.annotation is None:
            return {"question_id": self.question_id, "image_id": self.image_id, "case": self.case,
                    "pending": True, "reason": self.reason}
        d = self.annotation.to_dict()
        d["case"] = self.case
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoutingOutcome":
        ann = None if d.get("pending") else GtAnnotation.from_dict(d)
        return cls(str(d["question_id"]), str(d.get("image_id", "")), d["case"], ann, d.get("reason", ""))


@dataclass
class PipelineResult:
    outcomes: list[RoutingOutcome]
    errors: list[tuple[int, str, str]] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(o.to_dict(), sort_keys=True) + "\n" for o in self.outcomes)


_PUNCT = string.punctuation + "“”‘’"


def normalize_text(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation, drop empties."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def match_answer(ocr: OcrDocument, answer: str) -> list[BoxPx]:
    """Boxes of every consecutive run of OCR words (on one line) spelling ``answer``."""
    target = normalize_text(answer)
    if not target:
        return []
    # token stream: (normalized token, word index, line)
    stream = [(tok, i, w.line) for i, w in enumerate(ocr.words) for tok in normalize_text(w.text)]
    k = len(target)
    matches = []
    for start in range(len(stream) - k + 1):
        run = stream[start:start + k]
        if [t for t, _, _ in run] != target:
            continue
        if len({line for _, _, line in run}) != 1:
            continue
        # a match must begin at a word boundary
        if start > 0 and stream[start - 1][1] == run[0][1]:
            continue
        if start + k < len(stream) and stream[start + k][1] == run[-1][1]:
            continue
        words = sorted({i for _, i, _ in run})
        matches.append(union_box(ocr.words[i].box for i in words))
    return matches


def _clip(box, width: float, height: float) -> BoxPx | None:
    try:
        x0, y0, x1, y1 = (float(c) for c in box)
    except (TypeError, ValueError):
        return None
    x0, x1 = max(0.0, min(x0, width)), max(0.0, min(x1, width))
    y0, y1 = max(0.0, min(y0, height)), max(0.0, min(y1, height))
    if x1 <= x0 or y1 <= y0:
        return None
    return BoxPx(x0, y0, x1, y1)


def _pick(clients: ServiceClients, question: str, text: str, ocr_text: str, candidates: list[BoxPx],
          prompt: str) -> BoxPx | None:
    idx = clients.llm_select(question, text, ocr_text, candidates, prompt=prompt)
    if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < len(candidates):
        return None
    return candidates[idx]


def route(record: QaRecord, ocr: OcrDocument, clients: ServiceClients, variant: str = "plain") -> RoutingOutcome:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")

    def manual(reason: str) -> RoutingOutcome:
        return RoutingOutcome(record.question_id, record.image_id, "manual", None, reason)

    answer, matches = record.answers[0], []
    for a in record.answers:
        matches = match_answer(ocr, a)
        if matches:
            answer = a
            break
    ocr_text = ocr.text()
    try:
        if len(matches) == 1:
            case, answer_box = "unique", matches[0]
        elif matches:
            case = "multiple"
            answer_box = _pick(clients, record.question, answer, ocr_text, matches, "select")
            if answer_box is None:
                return manual("LLM selected no valid candidate")
        else:
            case = "grounded"
            answer_box = _clip(clients.vlm_ground(record.image_id, record.question, answer), ocr.width, ocr.height)
            if answer_box is None:
                return manual("VLM returned an invalid or empty box")

        evidence: list[BoxPx] = []
        if variant == "rationale":
            for phrase in clients.llm_rationale(record.question, answer, ocr_text):
                found = match_answer(ocr, str(phrase))
                if len(found) == 1:
                    evidence.append(found[0])
                elif found:
                    box = _pick(clients, record.question, str(phrase), ocr_text, found, "localize")
                    if box is None:
                        return manual(f"LLM could not localize evidence {phrase!r}")
                    evidence.append(box)
    except Exception as exc:  # any client failure routes to manual
        return manual(f"client failure: {exc}")

    ann = GtAnnotation(record.question_id, union_box([answer_box] + evidence), [answer_box], evidence,
                       image_id=record.image_id)
    return RoutingOutcome(record.question_id, record.image_id, case, ann)


def run_pipeline(records: Sequence[QaRecord], docs: Mapping[str, OcrDocument] | None, clients: ServiceClients,
                 variant: str = "plain", parallelism: int = 1) -> PipelineResult:
    """Route every record; output order follows input order.

    A record whose OCR document is missing (and cannot be fetched) or whose OCR
    call fails yields a ``manual`` outcome plus an entry in ``errors``.
    """
    docs = dict(docs or {})

    def one(item):
        i, rec = item
        doc = docs.get(rec.image_id)
        if doc is None:
            if clients.ocr is None:
                return RoutingOutcome(rec.question_id, rec.image_id, "manual", None, "missing OCR document"), \
                    f"missing OCR document for image {rec.image_id!r}"
            try:
                doc = clients.ocr(rec.image_id)
            except Exception as exc:
                return RoutingOutcome(rec.question_id, rec.image_id, "manual", None, "OCR failure"), \
                    f"OCR failed for image {rec.image_id!r}: {exc}"
        return route(rec, doc, clients, variant), None

    items = list(enumerate(records))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    outcomes = [o for o, _ in results]
    errors = [(i, records[i].question_id, msg) for i, (_, msg) in enumerate(results) if msg]
    for i, qid, msg in errors:
        log.warning("record %d (%s): %s", i, qid, msg)
    return PipelineResult(outcomes, errors)


def pipeline_stats(outcomes: Sequence[RoutingOutcome]) -> dict:
    """Annotation counts per completed QA pair and routing-case percentages."""
    n = len(outcomes)
    done = [o.annotation for o in outcomes if o.annotation is not None]
    stats = {
        "qa_pairs": n,
        "completed": len(done),
        "answer": sum(len(a.answer_boxes) for a in done) / len(done) if done else 0.0,
        "evidence": sum(len(a.evidence_boxes) for a in done) / len(done) if done else 0.0,
        "encompass": 1.0 if done else 0.0,
    }
    for case in CASES:
        stats[CASE_LABELS[case]] = 100.0 * sum(o.case == case for o in outcomes) / n if n else 0.0
    return stats


STATS_COLUMNS = ["split", "qa_pairs", "completed", "answer", "evidence", "encompass"] + [CASE_LABELS[c] for c in CASES]


def write_stats_csv(per_split: Mapping[str, dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
        w.writeheader()
        for split, stats in per_split.items():
            w.writerow({"split": split, **stats})


def _read_jsonl(path: str | Path, parse) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_records(path: str | Path) -> list[QaRecord]:
    return _read_jsonl(path, QaRecord.from_dict)


def read_documents(path: str | Path) -> dict[str, OcrDocument]:
    return {d.image_id: d for d in _read_jsonl(path, OcrDocument.from_dict)}


def read_outcomes(path: str | Path) -> list[RoutingOutcome]:
    return _read_jsonl(path, RoutingOutcome.from_dict)


def write_outcomes(outcomes: Iterable[RoutingOutcome], path: str | Path) -> None:
    Path(path).write_text(PipelineResult(list(outcomes)).to_jsonl())
