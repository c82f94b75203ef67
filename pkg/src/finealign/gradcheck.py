"""Central-difference gradient checks for every loss and attention path.

Each check builds a fresh random problem from a draw-specific generator,
computes analytic gradients by ``backward`` and compares them against
central differences with a norm-wise relative error.  Large parameters are
probed on a random subset of coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import labels as LB
from . import losses
from . import tensor as T
from .attention import IfrConfig, IfrParams, MultiHeadAttentionParams, SaliencyMap, ifr_forward, mha, \
    saliency_mha, symptom_update, visual_classifier
from .losses import LossWeights
from .rng import derive
from .tensor import Parameter

TOLERANCE = 1e-4
STEP = 1e-6
MAX_COORDS = 12


@dataclass
class CheckResult:
    name: str
    draws: int
    worst: float
    seconds: float
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.draws > 0 and self.worst < TOLERANCE and not self.errors


def compare(f, params, rng, max_coords: int = MAX_COORDS) -> float:
    """Relative error between backward and central differences.

    The sampled coordinates of all ``params`` form one gradient vector and
    the norm-wise error is taken over it, so a tensor whose gradient is
    near zero cannot dominate with pure rounding noise.
    """
    loss = f()
    T.zero_grad(params)
    T.backward(loss)
    got, want = [], []
    for p in params:
        analytic = p.grad.copy().reshape(-1)
        if p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        else:
            coords = np.arange(p.size)
        numeric = T.finite_diff_grad(f, p, STEP, coords).reshape(-1)
        got.append(analytic[coords])
        want.append(numeric[coords])
    return T.relative_error(np.concatenate(got), np.concatenate(want))


def _param(rng, *shape, scale=1.0):
    return Parameter(rng.normal(0.0, scale, shape))


def _saliency(rng, n_obs, n_patches):
    m = rng.uniform(0.05, 1.0, (n_obs, n_patches))
    return SaliencyMap(m / m.max(axis=1, keepdims=True))


# -- individual checks; each returns (closure, params) ----------------------


def _lm_ce(rng):
    t, v = rng.integers(2, 6), rng.integers(3, 9)
    logits = _param(rng, t, v)
    targets = rng.integers(0, v, t).tolist()
    return (lambda: losses.lm_cross_entropy(logits, targets)), [logits]


def _bce(rng):
    n = rng.integers(1, 4)
    logits = _param(rng, n, LB.N_CLASSES, scale=2.0)
    y = rng.integers(0, 2, (n, LB.N_CLASSES)).astype(float)
    return (lambda: losses.bce_multilabel(logits, y)), [logits]


def _triplet(form):
    def build(rng):
        n, d = rng.integers(1, 5), rng.integers(2, 7)
        fa, fp, fn = (_param(rng, n, d) for _ in range(3))
        beta = rng.uniform(0.1, 1.0)
        # keep every hinge well inside its active region so the kink is never straddled
        if form == "standard":
            fn.assign(fa.data + 0.1 * rng.normal(size=(n, d)))
        return (lambda: losses.triplet_loss(fa, fp, fn, beta, form)), [fa, fp, fn]
    return build


def _itc(rng):
    n, d = rng.integers(2, 6), rng.integers(2, 7)
    img, txt = _param(rng, n, d), _param(rng, n, d)
    tau = rng.uniform(0.05, 1.0)
    return (lambda: losses.itc_loss(img, txt, tau)), [img, txt]


def _total(rng):
    a, b, c = _param(rng, 3, 5), _param(rng, 2, LB.N_CLASSES), _param(rng, 3, 4)
    c2 = _param(rng, 3, 4)
    targets = rng.integers(0, 5, 3).tolist()
    y = rng.integers(0, 2, (2, LB.N_CLASSES)).astype(float)
    w = LossWeights(lambda_cls_i=rng.uniform(0.1, 2.0), lambda_itc=rng.uniform(0.01, 1.0))

    def f():
        return losses.total_loss(losses.lm_cross_entropy(a, targets), losses.bce_multilabel(b, y),
                                 losses.itc_loss(c, c2, w.tau), w)
    return f, [a, b, c, c2]


def _tfr_total(rng):
    logits = _param(rng, 2, LB.N_CLASSES)
    y = rng.integers(0, 2, (2, LB.N_CLASSES)).astype(float)
    fa, fp = _param(rng, 3, 4), _param(rng, 3, 4)
    fn = Parameter(fa.data + 0.1 * rng.normal(size=(3, 4)))
    weight = rng.uniform(0.1, 2.0)

    def f():
        return losses.tfr_loss(losses.bce_multilabel(logits, y), losses.triplet_loss(fa, fp, fn, 0.5), weight)
    return f, [logits, fa, fp, fn]


def _mha_plain(rng):
    h = int(rng.choice([1, 2]))
    d = h * int(rng.integers(1, 4))
    q_n, c_n = rng.integers(1, 5), rng.integers(1, 6)
    params = MultiHeadAttentionParams.init(d, h, rng)
    Q, C = _param(rng, q_n, d), _param(rng, c_n, d)
    return (lambda: T.reduce_sum(T.mul(mha(Q, C, params), mha(Q, C, params)))), [Q, C] + params.parameters()


def _mha_saliency(rng):
    h = int(rng.choice([1, 2]))
    d = h * int(rng.integers(1, 4))
    n_obs, n_patch = rng.integers(1, 5), rng.integers(2, 6)
    params = MultiHeadAttentionParams.init(d, h, rng)
    C, V = _param(rng, n_obs, d), _param(rng, n_patch, d)
    S = _saliency(rng, n_obs, n_patch)
    alpha = rng.uniform(0.0, 2.0)
    target = rng.normal(size=(n_obs, d))

    def f():
        out = saliency_mha(C, V, S, alpha, params)
        diff = T.sub(out, T.Tensor(target))
        return T.reduce_sum(T.mul(diff, diff))
    return f, [C, V] + params.parameters()


def _mha_literal(rng):
    d, n_obs, n_patch = 4, rng.integers(1, 4), rng.integers(2, 5)
    params = MultiHeadAttentionParams.init(d, 2, rng)
    C, V = _param(rng, n_obs, d), _param(rng, n_patch, d)
    S = _saliency(rng, n_obs, n_patch)

    def f():
        out = saliency_mha(C, V, S, 0.7, params, normalize=False)
        return T.reduce_sum(T.mul(out, out))
    return f, [C, V] + params.parameters()


def _symptom_update(rng):
    d, n_obs = 4, rng.integers(1, 5)
    params = MultiHeadAttentionParams.init(d, 2, rng)
    C, Vh = _param(rng, n_obs, d), _param(rng, n_obs, d)
    return (lambda: T.reduce_sum(T.mul(symptom_update(C, Vh, params), symptom_update(C, Vh, params)))), \
        [C, Vh] + params.parameters()


def _ifr(rng):
    d, n_obs, n_patch = 4, rng.integers(2, 5), rng.integers(5, 8)
    cfg = IfrConfig(alpha=rng.uniform(0.0, 2.0), use_refined_visual_in_update=bool(rng.integers(0, 2)))
    params = IfrParams(MultiHeadAttentionParams.init(d, 2, rng), MultiHeadAttentionParams.init(d, 2, rng))
    C, V = _param(rng, n_obs, d), _param(rng, n_patch, d)
    S = _saliency(rng, n_obs, n_patch)
    target = rng.normal(size=(n_obs, d))

    def f():
        diff = T.sub(ifr_forward(C, V, S, cfg, params), T.Tensor(target))
        return T.reduce_sum(T.mul(diff, diff))
    return f, [C, V] + params.parameters()


def _visual_cls(rng):
    n_patch, d = rng.integers(2, 6), rng.integers(2, 6)
    V = _param(rng, n_patch, d)
    W, b = _param(rng, d, LB.N_CLASSES), _param(rng, LB.N_CLASSES)
    y = rng.integers(0, 2, LB.N_CLASSES).astype(float)
    return (lambda: losses.bce_multilabel(visual_classifier(V, W, b), y)), [V, W, b]


def _text_triplet(rng):
    from .text_encoder import TextEncoder, TfrConfig, encode_text

    cfg = TfrConfig(d=8, n_heads=2, depth=1, d_embed=4, max_len=8)
    enc = TextEncoder(12, cfg, rng)
    anchor = rng.integers(0, 12, rng.integers(2, 6)).tolist()
    positive = rng.integers(0, 12, rng.integers(2, 6)).tolist()
    # the negative differs from the anchor in one token so the hinge stays active
    negative = anchor[:-1] + [(anchor[-1] + 1) % 12]
    causal = bool(rng.integers(0, 2))

    def f():
        fa, fp, fn = (encode_text(s, enc, causal)[1] for s in (anchor, positive, negative))
        return losses.triplet_loss(fa, fp, fn, beta=1.0)
    return f, enc.parameters()


def _encode_image(rng):
    from .model import ModelConfig, ReportModel, encode_image

    cfg = ModelConfig(d=8, n_heads=2, n_encoder_blocks=1, n_decoder_blocks=0, n_patches=4, d_in=3,
                      vocab_size=5, max_len=4)
    model = ReportModel(cfg, rng)
    img = rng.normal(size=(4, 3))
    target = rng.normal(size=(4, 8))
    params = [model.patch_proj.W, model.patch_proj.b, model.patch_pos] + model.encoder[0].parameters()

    def f():
        diff = T.sub(encode_image(img, model), T.Tensor(target))
        return T.reduce_sum(T.mul(diff, diff))
    return f, params


def _pipeline(rng):
    from .model import ModelConfig, ReportGenerator, Sample
    from .text_encoder import TextEncoder, TfrConfig, Vocabulary

    vocab = Vocabulary("no acute findings heart size is normal enlarged".split())
    text = TextEncoder(len(vocab), TfrConfig(d=8, n_heads=2, depth=1, d_embed=4, max_len=12), rng)
    cfg = ModelConfig(d=8, n_heads=2, n_encoder_blocks=1, n_decoder_blocks=1, n_patches=4, d_in=3,
                      n_obs=LB.N_CLASSES, max_len=10, seed=int(rng.integers(0, 2 ** 31)),
                      weights=LossWeights(tau=0.5))
    gen = ReportGenerator(cfg, text, vocab, "")
    reports = ["heart size is enlarged", "no acute findings"]
    batch = []
    for i, rep in enumerate(reports):
        labs = list(LB.blank_vector())
        labs[rng.integers(0, LB.N_CLASSES)] = LB.POSITIVE
        sal = SaliencyMap(rng.uniform(0.1, 1.0, (LB.N_CLASSES, 4)), normalize=True)
        batch.append(Sample(f"g{i}", rng.normal(size=(4, 3)), rep, tuple(labs), sal))
    return (lambda: gen.teacher_forced_loss(batch)[0]), gen.model.parameters()


CHECKS = {
    "lm_cross_entropy": _lm_ce,
    "bce_multilabel": _bce,
    "triplet_standard": _triplet("standard"),
    "triplet_literal": _triplet("literal"),
    "itc_infonce": _itc,
    "total_loss": _total,
    "tfr_loss": _tfr_total,
    "mha_plain": _mha_plain,
    "mha_saliency": _mha_saliency,
    "mha_saliency_unnormalized": _mha_literal,
    "symptom_update": _symptom_update,
    "ifr_forward": _ifr,
    "visual_classifier_bce": _visual_cls,
    "text_encoder_triplet": _text_triplet,
    "encode_image": _encode_image,
    "pipeline_teacher_forced": _pipeline,
}

# the pipeline has ~60 parameter tensors, so it gets fewer coordinates each
COORDS = {"pipeline_teacher_forced": 2, "text_encoder_triplet": 4}


def run_check(name: str, draws: int = 20, seed: int = 0) -> CheckResult:
    build = CHECKS[name]
    t0 = time.perf_counter()
    worst = 0.0
    errors = []
    for k in range(draws):
        rng = derive(seed, "gradcheck", name, k)
        try:
            f, params = build(rng)
            worst = max(worst, compare(f, params, rng, COORDS.get(name, MAX_COORDS)))
        except Exception as exc:  # reported, not raised: the suite keeps going
            errors.append(f"draw {k}: {type(exc).__name__}: {exc}")
    return CheckResult(name, draws, worst, time.perf_counter() - t0, errors)


def run_suite(draws: int = 20, seed: int = 0, names=None, on_result=None) -> list:
    results = []
    for name in names or CHECKS:
        r = run_check(name, draws, seed)
        results.append(r)
        if on_result is not None:
            on_result(r)
    return results


def format_result(r: CheckResult) -> str:
    status = "PASS" if r.passed else "FAIL"
    line = f"{status} {r.name:<28} draws={r.draws:<3} max_rel_err={r.worst:.2e} ({r.seconds:.1f}s)"
    if r.errors:
        line += "\n    " + "\n    ".join(r.errors[:3])
    return line
