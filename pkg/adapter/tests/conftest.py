import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from finparse_adapter import AdapterConfig, create_app


def png_b64(arr: np.ndarray) -> str:
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def text_image(h=200, w=300) -> np.ndarray:
    img = np.full((h, w), 255, dtype=np.uint8)
    for y in range(30, h - 30, 40):
        img[y:y + 12, 20:120] = 0
        img[y:y + 12, 140:260] = 0
    return img


@pytest.fixture(scope="session")
def client():
    return TestClient(create_app(AdapterConfig()))
