"""External-service clients used by the annotation pipeline.

Four services are involved: OCR, an LLM that picks one of several candidate
boxes, an LLM that writes rationale phrases, and a VLM that grounds an answer
directly on the image. :class:`MockClients` answers from a script keyed by a
hash of the request; :class:`HttpClients` speaks JSON over HTTP.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

from .grid import BoxPx

PROMPT_KEYS = ("select", "rationale", "localize", "ground")


class ServiceError(RuntimeError):
    pass


@dataclass
class OcrWord:
    text: str
    box: BoxPx
    line: int = 0


@dataclass
class OcrDocument:
    image_id: str
    width: float
    height: float
    words: list[OcrWord] = field(default_factory=list)

    def __post_init__(self):
        frame = BoxPx(0, 0, self.width, self.height)
        for w in self.words:
            if not frame.contains(w.box):
                raise ValueError(f"OCR word {w.text!r} box {w.box.as_list()} outside the image")

    def text(self) -> str:
        lines: dict[int, list[str]] = {}
        for w in self.words:
            lines.setdefault(w.line, []).append(w.text)
        return "\n".join(" ".join(ws) for _, ws in sorted(lines.items()))

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "width": self.width, "height": self.height,
                "words": [{"text": w.text, "box": w.box.as_list(), "line": w.line} for w in self.words]}

    @classmethod
    def from_dict(cls, d: dict) -> "OcrDocument":
        words = [OcrWord(str(w["text"]), BoxPx.from_list(w["box"]), int(w.get("line", 0))) for w in d.get("words", [])]
        return cls(str(d["image_id"]), float(d["width"]), float(d["height"]), words)


def load_prompt(key: str) -> str:
    if key not in PROMPT_KEYS:
        raise KeyError(f"no prompt template {key!r}")
    return resources.files("pinpoint").joinpath("prompts", f"{key}.txt").read_text()


def _canonical(x):
    # 50 and 50.0 must hash alike: coordinates may arrive as either
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, dict):
        return {k: _canonical(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canonical(v) for v in x]
    return x


def request_key(service: str, payload: dict) -> str:
    """Stable hash of a request, used to index scripted mock responses."""
    blob = json.dumps({"service": service, "request": _canonical(payload)}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _select_payload(question, answer, ocr_text, candidates, prompt):
    return {"question": question, "answer": answer, "ocr_text": ocr_text,
            "candidates": [b.as_list() for b in candidates], "prompt": prompt}


@dataclass
class ServiceClients:
    ocr: Callable[[str], OcrDocument] | None
    llm_select: Callable[..., int]
    llm_rationale: Callable[[str, str, str], list[str]]
    vlm_ground: Callable[[str, str, str], Sequence[float]]


class MockClients(ServiceClients):
    """Deterministic clients answering from ``{service: {request_key: response}}``.

    ``defaults`` gives a fallback response per service; a request with neither
    a scripted nor a default response raises :class:`ServiceError`. Responses
    that are dicts with an ``"error"`` key also raise, to script failures.
    """

    def __init__(self, script: dict[str, dict[str, Any]] | None = None, defaults: dict[str, Any] | None = None,
                 documents: dict[str, OcrDocument] | None = None):
        self.script = {k: dict(v) for k, v in (script or {}).items()}
        self.defaults = dict(defaults or {})
        self.documents = dict(documents or {})
        super().__init__(self._ocr, self._select, self._rationale, self._ground)

    def add(self, service: str, payload: dict, response: Any) -> None:
        self.script.setdefault(service, {})[request_key(service, payload)] = response

    def script_select(self, question, answer, ocr_text, candidates, response, prompt="select") -> None:
        self.add("select", _select_payload(question, answer, ocr_text, candidates, prompt), response)

    def script_rationale(self, question, answer, ocr_text, response) -> None:
        self.add("rationale", {"question": question, "answer": answer, "ocr_text": ocr_text}, response)

    def script_ground(self, image_id, question, answer, response) -> None:
        self.add("ground", {"image_id": image_id, "question": question, "answer": answer}, response)

    def _lookup(self, service: str, payload: dict):
        table = self.script.get(service, {})
        key = request_key(service, payload)
        if key in table:
            resp = table[key]
        elif service in self.defaults:
            resp = self.defaults[service]
        else:
            raise ServiceError(f"no scripted {service} response for request {key[:12]}")
        if isinstance(resp, dict) and "error" in resp:
            raise ServiceError(str(resp["error"]))
        return resp

    def _ocr(self, image_id: str) -> OcrDocument:
        if image_id in self.documents:
            return self.documents[image_id]
        return OcrDocument.from_dict(self._lookup("ocr", {"image_id": image_id}))

    def _select(self, question, answer, ocr_text, candidates, prompt="select") -> int:
        return self._lookup("select", _select_payload(question, answer, ocr_text, candidates, prompt))

    def _rationale(self, question, answer, ocr_text) -> list[str]:
        return self._lookup("rationale", {"question": question, "answer": answer, "ocr_text": ocr_text})

    def _ground(self, image_id, question, answer):
        return self._lookup("ground", {"image_id": image_id, "question": question, "answer": answer})

    @classmethod
    def from_file(cls, path: str | Path) -> "MockClients":
        """Load ``{"entries": [{"service", "request", "response"}], "defaults": {...}}``."""
        doc = json.loads(Path(path).read_text())
        mock = cls(defaults=doc.get("defaults"))
        for entry in doc.get("entries", []):
            mock.add(entry["service"], entry["request"], entry["response"])
        return mock


class HttpClients(ServiceClients):
    """JSON-over-HTTP adapters; each service is ``POST {base_url}/{service}``.

    Request bodies carry the rendered prompt plus the structured fields.
    Expected replies: ``{"document": {...}}`` for ocr, ``{"index": int}`` for
    select, ``{"sentences": [...]}`` for rationale and ``{"box": [x0, y0, x1, y1]}``
    for ground.
    """

    def __init__(self, base_url: str, http_client=None, timeout: float = 60.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.http = http_client if http_client is not None else httpx.Client(timeout=timeout)
        self.templates = {k: load_prompt(k) for k in PROMPT_KEYS}
        super().__init__(self._ocr, self._select, self._rationale, self._ground)

    def _post(self, service: str, body: dict) -> dict:
        try:
            resp = self.http.post(f"{self.base_url}/{service}", json=body)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:  # transport, HTTP status or JSON decoding
            raise ServiceError(f"{service} request failed: {exc}") from exc

    def _ocr(self, image_id: str) -> OcrDocument:
        return OcrDocument.from_dict(self._post("ocr", {"image_id": image_id})["document"])

    def _select(self, question, answer, ocr_text, candidates, prompt="select") -> int:
        listing = "\n".join(f"{i}: " + ", ".join(f"{c:g}" for c in b.as_list()) for i, b in enumerate(candidates))
        body = _select_payload(question, answer, ocr_text, candidates, prompt)
        body["prompt_text"] = self.templates[prompt].format(question=question, answer=answer, ocr_text=ocr_text,
                                                            candidates=listing)
        return self._post("select", body)["index"]

    def _rationale(self, question, answer, ocr_text) -> list[str]:
        body = {"question": question, "answer": answer, "ocr_text": ocr_text,
                "prompt_text": self.templates["rationale"].format(question=question, answer=answer,
                                                                  ocr_text=ocr_text)}
        return self._post("rationale", body)["sentences"]

    def _ground(self, image_id, question, answer):
        body = {"image_id": image_id, "question": question, "answer": answer,
                "prompt_text": self.templates["ground"].format(image_id=image_id, question=question, answer=answer)}
        return self._post("ground", body)["box"]
