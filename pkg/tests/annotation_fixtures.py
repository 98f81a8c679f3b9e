"""Hermetic OCR documents, QA records and scripted clients, one record per routing case."""
from pinpoint.annotate import QaRecord
from pinpoint.clients import MockClients, OcrDocument, OcrWord, request_key
from pinpoint.grid import BoxPx


def document() -> OcrDocument:
    words = [
        ("Revenue", (10, 10, 60, 20), 0), ("grew", (65, 10, 90, 20), 0), ("42%", (95, 10, 120, 20), 0),
        ("New", (10, 40, 35, 50), 1), ("York", (40, 40, 70, 50), 1), ("office", (75, 40, 110, 50), 1),
        ("Total:", (10, 70, 45, 80), 2), ("$5", (50, 70, 65, 80), 2),
        ("Paid:", (10, 100, 40, 110), 3), ("$5", (45, 100, 60, 110), 3),
    ]
    return OcrDocument("doc1", 200, 150, [OcrWord(t, BoxPx(*b), line) for t, b, line in words])


RECORDS = [
    QaRecord("q-unique", "doc1", "How much did revenue grow?", ["42%"]),
    QaRecord("q-multiple", "doc1", "What was the total?", ["$5"]),
    QaRecord("q-grounded", "doc1", "What animal is in the logo?", ["a lion"]),
    QaRecord("q-manual", "doc1", "Which colour is the chart?", ["blue"]),
]

GROUND_BOX = [150, 20, 190, 60]


def clients(doc=None) -> MockClients:
    doc = doc or document()
    ocr_text = doc.text()
    mock = MockClients()
    candidates = [BoxPx(50, 70, 65, 80), BoxPx(45, 100, 60, 110)]
    mock.script_select("What was the total?", "$5", ocr_text, candidates, 0)
    mock.script_ground("doc1", "What animal is in the logo?", "a lion", GROUND_BOX)
    mock.script_ground("doc1", "Which colour is the chart?", "blue", {"error": "service unavailable"})
    return mock


def mock_script(doc=None) -> dict:
    """The same scripted responses in the on-disk format read by ``MockClients.from_file``."""
    mock = clients(doc)
    entries = []
    ocr_text = (doc or document()).text()
    select_req = {"question": "What was the total?", "answer": "$5", "ocr_text": ocr_text,
                  "candidates": [[50, 70, 65, 80], [45, 100, 60, 110]], "prompt": "select"}
    entries.append({"service": "select", "request": select_req, "response": 0})
    entries.append({"service": "ground", "request": {"image_id": "doc1", "question": "What animal is in the logo?",
                                                     "answer": "a lion"}, "response": GROUND_BOX})
    entries.append({"service": "ground", "request": {"image_id": "doc1", "question": "Which colour is the chart?",
                                                     "answer": "blue"}, "response": {"error": "service unavailable"}})
    assert request_key("select", select_req) in mock.script["select"]
    return {"entries": entries}
