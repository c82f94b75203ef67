"""Time the numba kernels against their numpy fallbacks, plus one training step under each backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from finealign import _kernels

STEP_SNIPPET = """
import time
import numpy as np
from finealign.model import ModelConfig, Phase2Trainer, ReportGenerator, Sample
from finealign.synth import SyntheticSpec, synth_samples
from finealign.text_encoder import TextEncoder, TfrConfig, Vocabulary
samples = [Sample(s["id"], s["image"], s["report"], s["labels"], s["saliency"])
           for s in synth_samples(SyntheticSpec(n_samples=8), 0)]
vocab = Vocabulary.from_texts([s.report for s in samples])
text = TextEncoder(len(vocab), TfrConfig(), np.random.default_rng(0))
gen = ReportGenerator(ModelConfig(n_patches=16, d_in=16), text, vocab, "")
trainer = Phase2Trainer(gen, samples)
trainer.run(1)
t0 = time.perf_counter()
trainer.run(6)
print((time.perf_counter() - t0) / 5)
"""


def cases(rng):
    x = rng.normal(size=(64, 64))
    g = rng.normal(size=(64, 64))
    sm = _kernels.NUMPY_KERNELS["softmax_rows"](x)
    lsm = _kernels.NUMPY_KERNELS["log_softmax_rows"](x)
    xhat, inv = _kernels.NUMPY_KERNELS["layer_norm"](x, 1e-5)
    a = rng.integers(0, 20, 60)
    b = rng.integers(0, 20, 60)
    pos = np.arange(0, 40, dtype=np.int64)
    neg = np.arange(40, 100, dtype=np.int64)
    return {
        "softmax_rows": (x,),
        "softmax_rows_grad": (sm, g),
        "log_softmax_rows": (x,),
        "log_softmax_rows_grad": (lsm, g),
        "layer_norm": (x, 1e-5),
        "layer_norm_grad": (xhat, inv, g),
        "lcs_length": (a, b),
        "pair_triplets": (pos, neg),
    }


def step_time(no_numba: bool) -> float:
    env = dict(os.environ, FINEALIGN_NO_NUMBA="1" if no_numba else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        sys.exit("numba is not importable (or FINEALIGN_NO_NUMBA is set); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, call_args in cases(rng).items():
        f_np, f_nb = _kernels.NUMPY_KERNELS[name], _kernels.NUMBA_KERNELS[name]
        f_nb(*call_args)  # compile outside the timing
        n = args.repeat if name != "lcs_length" else max(args.repeat // 20, 10)
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=n, repeat=3)) / n * 1e6
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=n, repeat=3)) / n * 1e6
        print(f"{name:<24}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
    s_np, s_nb = step_time(True), step_time(False)
    print(f"\nphase-2 step, default model, 8 samples: numpy {s_np * 1e3:.1f} ms, numba {s_nb * 1e3:.1f} ms "
          f"({s_np / s_nb:.2f}x)")


if __name__ == "__main__":
    main()
