"""JSON Schema for transcript lines plus the ordering rules a schema cannot express."""
from __future__ import annotations

import jsonschema

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}

MESSAGE_SCHEMA = {
    "oneOf": [
        {"type": "object",
         "properties": {"type": {"const": "handshake"}, "A": _matrix, "B": _matrix, "C": _matrix,
                        "M": _matrix, "x_ref": _matrix, "u_ref": _matrix, "D": _matrix,
                        "N": {"type": "integer", "minimum": 0}},
         "required": ["type", "A", "B", "C", "M", "x_ref", "u_ref", "D", "N"],
         "additionalProperties": False},
        {"type": "object",
         "properties": {"type": {"const": "measurement"}, "k": {"type": "integer", "minimum": 0},
                        "y": _vector},
         "required": ["type", "k", "y"], "additionalProperties": False},
        {"type": "object",
         "properties": {"type": {"const": "control"}, "k": {"type": "integer", "minimum": 0},
                        "u": _vector, "status": {"type": "string"}},
         "required": ["type", "k", "u", "status"], "additionalProperties": False},
    ]
}

LINE_SCHEMA = {
    "type": "object",
    "properties": {"dir": {"enum": ["plant->cloud", "cloud->plant"]}, "msg": MESSAGE_SCHEMA},
    "required": ["dir", "msg"],
    "additionalProperties": False,
}


class TranscriptError(ValueError):
    pass


def validate_transcript(transcript) -> None:
    """Schema per line, one leading handshake, then measurement/control pairs with ``k = 0, 1, ...``."""
    entries = transcript.entries
    for i, (d, m) in enumerate(entries):
        try:
            jsonschema.validate({"dir": d, "msg": m}, LINE_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise TranscriptError(f"line {i}: {exc.message}") from exc
    if not entries or entries[0][1]["type"] != "handshake" or entries[0][0] != "plant->cloud":
        raise TranscriptError("transcript must start with a handshake from the plant")
    for i, (d, m) in enumerate(entries[1:], start=1):
        want = ("plant->cloud", "measurement") if i % 2 else ("cloud->plant", "control")
        if (d, m["type"]) != want:
            raise TranscriptError(f"line {i}: expected {want[1]}, got {m['type']}")
        if m["k"] != (i - 1) // 2:
            raise TranscriptError(f"line {i}: step {m['k']} out of order")
