"""Built-in verification suite behind ``senselab selfcheck``.

Each check returns ``(name, passed, detail)``. The checks are small enough to
run in a few seconds.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .corpus import EOS
from .evaluation import score
from .lstm_lm import ModelConfig, LstmParams, init_params, loss_and_grads, perplexity, zero_output
from .numeric import grad_check, softmax_xent
from .wsd import LpProblem, SenseEmbeddingTable, SenseEntry, classify_vector, propagate_labels


def _perturbed_params(V: int, p: int, h: int, seed: int) -> LstmParams:
    # larger than the init scale so every gate is away from its linear regime
    base = init_params(ModelConfig(V=V, p=p, h=h, seed=seed))
    rng = np.random.default_rng([seed, 99])
    return LstmParams(**{k: v + rng.normal(scale=0.5, size=v.shape) for k, v in base.as_dict().items()})


def check_lstm_gradients(seeds=(0, 1, 2), V=12, p=4, h=6, length=5):
    out = []
    for seed in seeds:
        params = _perturbed_params(V, p, h, seed)
        rng = np.random.default_rng([seed, 7])
        sent = [int(w) for w in rng.integers(4, V, size=length - 1)] + [EOS]
        pos = int(rng.integers(0, length - 1))

        def f(d, sent=sent, pos=pos):
            loss, grads, _, _ = loss_and_grads(LstmParams(**d), [sent], [pos])
            return loss, grads

        rep = grad_check(f, params.as_dict(), threshold=1e-4, name=f"lstm seed={seed}")
        out.append((f"gradient: {rep.name}", rep.passed, f"max rel err {rep.max_rel_error:.2e}"))
    return out


def check_softmax_gradient():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(3, 5))
    targets = [0, 3, 4]

    def f(d):
        loss, g = softmax_xent(d["logits"], targets)
        return loss, {"logits": g}

    rep = grad_check(f, {"logits": logits}, threshold=1e-6, name="softmax_xent")
    return [(f"gradient: {rep.name}", rep.passed, f"max rel err {rep.max_rel_error:.2e}")]


def check_linear_gradient():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 3))

    def f(d):
        return float(np.sum(a * d["x"])), {"x": a}

    rep = grad_check(f, {"x": rng.normal(size=(4, 3))}, threshold=1e-9, name="linear")
    return [(f"gradient: {rep.name}", rep.passed, f"max rel err {rep.max_rel_error:.2e}")]


def check_uniform_anchor(V=12):
    params = zero_output(init_params(ModelConfig(V=V, p=4, h=6)))
    sent = [4, 5, 6, 7, EOS]
    loss, _, _, _ = loss_and_grads(params, [sent], [1], with_grads=False)
    ppl = perplexity(params, [sent, [8, 9, 10, EOS]])
    ok = abs(loss - math.log(V)) <= 1e-9 and abs(ppl - V) <= 1e-9
    return [("uniform softmax anchor", ok, f"loss={loss!r} ln V={math.log(V)!r} ppl={ppl!r}")]


def check_nn_oracle(cases=200, seed=11):
    rng = np.random.default_rng(seed)
    bad = 0
    for case in range(cases):
        p = int(rng.integers(1, 17))
        n = int(rng.integers(1, 9))
        table = SenseEmbeddingTable(p)
        keys = [f"k{j}" for j in rng.permutation(n)]
        for key in keys:
            table.by_key[key] = SenseEntry("w", "noun", rng.normal(size=p), 1)
        q = rng.normal(size=p)
        pred = classify_vector(str(case), q, "w", "noun", table)
        scores = {}
        for key in keys:
            c = table.by_key[key].centroid
            dot = sum(x * y for x, y in zip(q, c))
            scores[key] = dot / (math.sqrt(sum(x * x for x in q)) * math.sqrt(sum(y * y for y in c)))
        best = max(scores.values())
        want = min(k for k, s in scores.items() if s >= best - 1e-12)
        bad += pred.sense_key != want
    return [("nn classifier vs brute-force scan", bad == 0, f"{cases - bad}/{cases} agree")]


def check_lp_chain(sigma=3.0):
    X = np.array([[0.0], [10.0], [1.0]])
    res = propagate_labels(LpProblem(X, ["A", "B", None], k=2, sigma=sigma, tol=1e-6))
    mass = res.distributions[2, 0]
    expected = 1.0 / (1.0 + math.exp(-80.0 / sigma ** 2))
    ok = res.predictions[0].sense_key == "A" and abs(mass - expected) <= 1e-6 and mass > 0.99
    return [("label propagation 3-node chain", ok, f"mass toward A {mass:.6f}, closed form {expected:.6f}")]


def check_scorer():
    gold = {"a": {"x"}, "b": {"y"}, "c": {"z"}}
    r1 = score({"a": "x", "b": "y", "c": "q"}, gold)
    r2 = score([("a", "x"), ("b", "ABSTAIN")], {"a": {"x"}, "b": {"y"}})
    ok = (abs(r1.f1 - 2 / 3) <= 1e-9 and abs(r2.precision - 1) <= 1e-9 and abs(r2.recall - 0.5) <= 1e-9
          and abs(r2.f1 - 2 / 3) <= 1e-9)
    return [("scorer hand counts", ok, f"f1={r1.f1:.4f}, P={r2.precision:.4f} R={r2.recall:.4f}")]


ALL_CHECKS = (check_linear_gradient, check_softmax_gradient, check_lstm_gradients, check_uniform_anchor,
              check_nn_oracle, check_lp_chain, check_scorer)


def run_all():
    return list(itertools.chain.from_iterable(c() for c in ALL_CHECKS))
