"""Golden wire fixtures validated bit-exactly against the published schemas."""

import json

import jsonschema
import pytest

from finparse_adapter.schemas import (EXTRACT_REQUEST_SCHEMA,
                                      EXTRACT_RESPONSE_SCHEMA,
                                      OCR_REQUEST_SCHEMA, OCR_RESPONSE_SCHEMA)

from conftest import png_b64, text_image

GOLDEN_OCR_REQUEST = {
    "image_png_b64": "aGVsbG8=",
    "languages": ["en", "zh", "id"],
}

GOLDEN_OCR_RESPONSE = {
    "tokens": [
        {
            "text": "Revenue",
            "box": [[10.0, 20.0], [90.0, 20.0], [90.0, 38.0], [10.0, 38.0]],
            "confidence": 0.97,
            "line_id": 0,
            "language": "en",
        },
        {
            "text": "4,500",
            "box": [[100.0, 20.0], [150.0, 20.0], [150.0, 38.0], [100.0, 38.0]],
            "confidence": 0.93,
            "line_id": 0,
            "language": None,
        },
    ]
}

GOLDEN_EXTRACT_REQUEST = {
    "prompt": "Extract total revenue.",
    "images_png_b64": ["aGVsbG8="],
    "max_tokens": 512,
}

GOLDEN_EXTRACT_RESPONSE = {
    "text": '{"value": "4,500", "unit_scale": 1000, "currency": "IDR", '
            '"page_no": 7, "quote": "4,500"}',
}


class TestGoldenFixtures:
    def test_ocr_request_validates(self):
        jsonschema.validate(GOLDEN_OCR_REQUEST, OCR_REQUEST_SCHEMA)

    def test_ocr_response_validates(self):
        jsonschema.validate(GOLDEN_OCR_RESPONSE, OCR_RESPONSE_SCHEMA)

    def test_extract_request_validates(self):
        jsonschema.validate(GOLDEN_EXTRACT_REQUEST, EXTRACT_REQUEST_SCHEMA)

    def test_extract_response_validates(self):
        jsonschema.validate(GOLDEN_EXTRACT_RESPONSE, EXTRACT_RESPONSE_SCHEMA)

    def test_field_names_are_bit_exact(self):
        # wire field names as written, byte for byte
        assert set(GOLDEN_OCR_REQUEST) == {"image_png_b64", "languages"}
        assert set(GOLDEN_OCR_RESPONSE["tokens"][0]) == {
            "text", "box", "confidence", "line_id", "language"}
        assert set(GOLDEN_EXTRACT_REQUEST) == {"prompt", "images_png_b64",
                                               "max_tokens"}
        assert set(GOLDEN_EXTRACT_RESPONSE) == {"text"}

    @pytest.mark.parametrize("mutation", [
        {"confidence": 1.3},
        {"confidence": -0.1},
        {"box": [[0, 0], [1, 0], [1, 1]]},
        {"line_id": "zero"},
    ])
    def test_schema_rejects_invariant_violations(self, mutation):
        bad = json.loads(json.dumps(GOLDEN_OCR_RESPONSE))
        bad["tokens"][0].update(mutation)
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(bad, OCR_RESPONSE_SCHEMA)


class TestLiveResponsesValidate:
    def test_ocr_response_conforms(self, client):
        payload = {"image_png_b64": png_b64(text_image()), "languages": ["en"]}
        r = client.post("/ocr", json=payload)
        assert r.status_code == 200
        jsonschema.validate(r.json(), OCR_RESPONSE_SCHEMA)
        assert r.json()["tokens"], "detector found no regions on a text image"

    def test_extract_response_conforms(self, client):
        payload = {"prompt": "p", "images_png_b64": [png_b64(text_image())],
                   "max_tokens": 64}
        r = client.post("/extract", json=payload)
        assert r.status_code == 200
        jsonschema.validate(r.json(), EXTRACT_RESPONSE_SCHEMA)
