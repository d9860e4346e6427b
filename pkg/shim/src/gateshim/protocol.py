"""Wire format of the gate backend link: one JSON object per line.

Requests:  {"id": <int >= 1>, "op": <op>, "image": <path>}
Responses: {"id": ..., "status": "ok", "result": {...}}
           {"id": ..., "status": "error", "code": ..., "message": ...}

Ids are strictly increasing per connection; every request gets exactly one
response. Result payloads per op:

    detect_vehicle, detect_plate: {"detections": [{"class_id", "confidence",
                                   "cx", "cy", "w", "h"}, ...]}  (normalized)
    ocr:                          {"text": str, "confidence": float}
    face_embed:                   {"embedding": [float, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

OPS = ("detect_vehicle", "detect_plate", "ocr", "face_embed")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Request:
    op: str
    request_id: int
    image: str


def decode_request(line: str) -> Request:
    try:
        obj = json.loads(line)
        request_id = obj["id"]
        op = obj["op"]
        image = obj["image"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"bad request line: {exc}") from None
    if not isinstance(request_id, int) or request_id < 1:
        raise ProtocolError(f"bad request id {request_id!r}")
    if op not in OPS:
        raise ProtocolError(f"unknown op {op!r}")
    if not isinstance(image, str) or not image:
        raise ProtocolError("empty image path")
    return Request(op=op, request_id=request_id, image=image)


def peek_request_id(line: str) -> int:
    """Best-effort id extraction from a malformed line, for the error reply."""
    try:
        value = json.loads(line).get("id", 0)
        return value if isinstance(value, int) else 0
    except (ValueError, TypeError, AttributeError):
        return 0


def ok_response(request_id: int, result: dict) -> str:
    return json.dumps({"id": request_id, "status": "ok", "result": result},
                      sort_keys=True)


def error_response(request_id: int, code: str, message: str) -> str:
    return json.dumps({"id": request_id, "status": "error", "code": code,
                       "message": message}, sort_keys=True)


def clamp(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, float(value)))


def clamp_detection(det: dict) -> dict:
    """Force a raw engine detection into protocol ranges."""
    return {
        "class_id": int(det["class_id"]),
        "confidence": clamp(det["confidence"], 0.0, 1.0),
        "cx": clamp(det["cx"], 0.0, 1.0),
        "cy": clamp(det["cy"], 0.0, 1.0),
        "w": clamp(det["w"], 1e-4, 1.0),
        "h": clamp(det["h"], 1e-4, 1.0),
    }
