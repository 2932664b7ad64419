"""Compare the compiled and NumPy LSTM kernels.

Times forward, backward and one training epoch for each available backend,
then prints the speed-up. Usage::

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from senselab.evaluation import default_pseudo_spec, make_pseudo_corpus
from senselab.corpus import build_vocabulary, encode
from senselab.lstm_lm import ModelConfig, kernels, train


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_kernels(name, repeat, T=20, B=16, p=32, h=64):
    impl = kernels.get_backend(name)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(T, B, p))
    mask = np.ones((T, B))
    W_x, W_h = rng.normal(scale=0.1, size=(p, 4 * h)), rng.normal(scale=0.1, size=(h, 4 * h))
    b = np.zeros(4 * h)
    dh = rng.normal(size=(B, h))
    cache = impl.lstm_forward(X, mask, W_x, W_h, b)
    fwd = _best(lambda: impl.lstm_forward(X, mask, W_x, W_h, b), repeat)
    bwd = _best(lambda: impl.lstm_backward(X, mask, W_x, W_h, *cache, dh), repeat)
    return fwd, bwd


def bench_epoch(name, sentences, V):
    impl = kernels.get_backend(name)
    saved = kernels.lstm_forward, kernels.lstm_backward
    kernels.lstm_forward, kernels.lstm_backward = impl.lstm_forward, impl.lstm_backward
    try:
        t = time.perf_counter()
        train(ModelConfig(V=V, p=32, h=64, epochs=1), sentences, log_every=0)
        return time.perf_counter() - t
    finally:
        kernels.lstm_forward, kernels.lstm_backward = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--sentences", type=int, default=500)
    args = ap.parse_args()

    pc = make_pseudo_corpus(default_pseudo_spec(n_train_lm=args.sentences))
    vocab = build_vocabulary(pc.lm_sentences, 20000)
    data = [encode(s, vocab) for s in pc.lm_sentences]

    rows = {}
    for name in sorted(kernels.BACKENDS):
        fwd, bwd = bench_kernels(name, args.repeat)
        rows[name] = (fwd, bwd, bench_epoch(name, data, len(vocab)))
    print(f"{'backend':<8} {'forward ms':>11} {'backward ms':>12} {'epoch s':>9}")
    for name, (f, b, e) in rows.items():
        print(f"{name:<8} {1e3 * f:>11.3f} {1e3 * b:>12.3f} {e:>9.2f}")
    if "cython" in rows:
        py, cy = rows["python"], rows["cython"]
        print(f"speed-up  {py[0] / cy[0]:>10.1f}x {py[1] / cy[1]:>11.1f}x {py[2] / cy[2]:>8.1f}x")
    else:
        print("compiled extension not built; only the NumPy backend was timed")


if __name__ == "__main__":
    main()
