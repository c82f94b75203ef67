import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from finealign import labels as LB  # noqa: E402
from finealign.cli import main  # noqa: E402
from finealign.model import ModelConfig, ReportGenerator, Sample  # noqa: E402
from finealign.synth import SyntheticSpec, synth_samples  # noqa: E402
from finealign.text_encoder import TextEncoder, TfrConfig, Vocabulary  # noqa: E402

PIPELINE_FILES = ("tfr.json", "model.json", "model.loss.csv", "gen.jsonl", "eval.json")


def run_cli(*argv):
    return main([str(a) for a in argv])


def run_pipeline(workdir, seed=0, extra_train=()):
    """synth -> segment -> mine -> train-tfr -> train -> generate -> evaluate in ``workdir``."""
    w = str(workdir)
    data = os.path.join(w, "data", "dataset.jsonl")
    steps = [
        ("synth", "--out", os.path.join(w, "data"), "--seed", seed),
        ("segment", "--dataset", data, "--out", os.path.join(w, "segments.jsonl")),
        ("mine", "--segments", os.path.join(w, "segments.jsonl"), "--out", os.path.join(w, "triplets.jsonl"),
         "--cap", 200, "--seed", seed),
        ("train-tfr", "--dataset", data, "--segments", os.path.join(w, "segments.jsonl"),
         "--triplets", os.path.join(w, "triplets.jsonl"), "--out", os.path.join(w, "tfr.json"), "--seed", seed),
        ("train", "--dataset", data, "--tfr", os.path.join(w, "tfr.json"), "--out", os.path.join(w, "model.json"),
         "--seed", seed, *extra_train),
        ("generate", "--checkpoint", os.path.join(w, "model.json"), "--dataset", data,
         "--out", os.path.join(w, "gen.jsonl")),
        ("evaluate", "--generated", os.path.join(w, "gen.jsonl"), "--dataset", data,
         "--out", os.path.join(w, "eval.json")),
    ]
    for argv in steps:
        rc = run_cli(*argv)
        if rc != 0:
            raise AssertionError(f"{argv[0]} exited {rc}")
    return w


@pytest.fixture(scope="session")
def golden_run(tmp_path_factory):
    """One full default-configuration pipeline run shared by the slow tests."""
    t0 = time.perf_counter()
    workdir = run_pipeline(tmp_path_factory.mktemp("golden"))
    return {"dir": workdir, "seconds": time.perf_counter() - t0}


ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_generator(seed=0, **overrides):
    """A small untrained generator over a fixed vocabulary."""
    vocab = Vocabulary("no acute findings the heart size is normal enlarged there pleural effusion".split())
    kw = dict(d=8, n_heads=2, n_encoder_blocks=1, n_decoder_blocks=1, n_patches=4, d_in=3, max_len=40,
              seed=seed)
    kw.update(overrides)
    text = TextEncoder(len(vocab), TfrConfig(d=kw["d"], n_heads=2, depth=1, d_embed=4, max_len=48),
                       np.random.default_rng(seed))
    return ReportGenerator(ModelConfig(**kw), text, vocab, "")


def tiny_samples(n=2, seed=0, n_patches=4, d_in=3):
    spec = SyntheticSpec(n_samples=n, n_patches=n_patches, d_in=d_in)
    return [Sample(s["id"], s["image"], s["report"], s["labels"], s["saliency"]) for s in synth_samples(spec, seed)]


@pytest.fixture
def labels_blank():
    return LB.blank_vector()
