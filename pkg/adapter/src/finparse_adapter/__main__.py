"""Run the adapter: python -m finparse_adapter [--config adapter.yaml]"""

import argparse

import uvicorn

from .app import create_app
from .config import load_config


def main(argv=None):
    parser = argparse.ArgumentParser(description="finparse OCR/VLM adapter service")
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    host = args.host or cfg.host
    port = args.port or cfg.port
    uvicorn.run(create_app(cfg), host=host, port=port)


if __name__ == "__main__":
    main()
