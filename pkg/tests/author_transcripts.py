"""Regenerate the replay caches of the fixture apps.

    python3 -m tests.author_transcripts

Runs the full pipeline in record mode against the scripted analyst for every
configuration the tests replay, then compacts each cache.
"""

import tempfile
from pathlib import Path

from droidtrace.config import Config
from droidtrace.cli import run_pipeline

from .scripted import ScriptedAnalyst

APPS = Path(__file__).parent / "fixtures" / "apps"
SHA = {
    "malicious": "5f1c0a8e3b7d2c9f4e6a1b0d8c7f3e2a9b5d4c1e0f7a6b3c2d9e8f1a0b7c6d5e",
    "benign": "0a1b2c3d4e5f60718293a4b5c6d7e8f90a1b2c3d4e5f60718293a4b5c6d7e8f9",
}
VARIANTS = {
    "malicious": [{}, {"split_and_clean": False}, {"use_descriptions": False}, {"single_turn": True}],
    "benign": [{}],
}


def author(app: str) -> Path:
    cache = APPS / app / "cache.jsonl"
    if cache.exists():
        cache.unlink()
    for overrides in VARIANTS[app]:
        with tempfile.TemporaryDirectory() as out:
            cfg = Config(llm_mode="record", cache=str(cache), out_dir=out, **overrides)
            run_pipeline(cfg, APPS / app / "src", app_id=app, sha256=SHA[app], provider=ScriptedAnalyst())
    return cache


if __name__ == "__main__":
    for name in VARIANTS:
        path = author(name)
        print(f"{name}: {sum(1 for _ in path.open())} cached completions -> {path}")
