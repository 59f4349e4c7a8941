"""Published JSON Schemas for the OCR and VLM wire protocols.

Field names are bit-exact; both the adapter and any conformant backend
must validate against these.
"""

POINT_SCHEMA = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}

OCR_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image_png_b64", "languages"],
    "additionalProperties": False,
    "properties": {
        "image_png_b64": {"type": "string"},
        "languages": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    },
}

OCR_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["tokens"],
    "additionalProperties": False,
    "properties": {
        "tokens": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["text", "box", "confidence", "line_id"],
                "additionalProperties": False,
                "properties": {
                    "text": {"type": "string"},
                    "box": {
                        "type": "array",
                        "items": POINT_SCHEMA,
                        "minItems": 4,
                        "maxItems": 4,
                    },
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "line_id": {"type": "integer"},
                    "language": {"type": ["string", "null"]},
                },
            },
        },
    },
}

EXTRACT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["prompt", "images_png_b64", "max_tokens"],
    "additionalProperties": False,
    "properties": {
        "prompt": {"type": "string"},
        "images_png_b64": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "max_tokens": {"type": "integer", "minimum": 1},
    },
}

EXTRACT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["text"],
    "additionalProperties": False,
    "properties": {
        "text": {"type": "string"},
    },
}
