"""Small trainable text encoder, its embedding head, and phase-1 training."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint as ckpt
from . import labels as LB
from . import losses
from . import tensor as T
from .labeler import SENTENCE_END, detokenize, report_tokens, tokenize
from .layers import Linear, Module, SelfAttentionBlock, causal_bias
from .optim import GradientDescent
from .rng import derive
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIALS = ("<bos>", "<eos>", "<pad>", "<unk>")


class Vocabulary:
    def __init__(self, words):
        words = [w for w in words if w not in SPECIALS]
        # the sentence-end marker is always present so reports keep their segment boundaries
        self.itos = list(SPECIALS) + sorted(set(words) | {SENTENCE_END})
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_texts(cls, texts) -> "Vocabulary":
        return cls(w for t in texts for w in tokenize(t))

    def __len__(self):
        return len(self.itos)

    def encode(self, text: str) -> list:
        """Ids of a report; sentence boundaries become ``SENTENCE_END`` tokens."""
        return [self.stoi.get(w, UNK) for w in report_tokens(text)]

    def decode(self, ids) -> list:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (BOS, PAD):
                continue
            out.append(self.itos[i])
        return out

    def decode_text(self, ids) -> str:
        return detokenize(self.decode(ids))

    def to_list(self) -> list:
        return list(self.itos[len(SPECIALS):])


@dataclass
class TfrConfig:
    d: int = 64
    n_heads: int = 4
    depth: int = 2
    d_embed: int = 32
    max_len: int = 64
    steps: int = 200
    lr: float = 0.05
    momentum: float = 0.0
    beta: float = 0.3
    triplet_form: str = "standard"
    triplet_weight: float = 1.0
    seed: int = 0


class TextEncoder(Module):
    """Token + position embeddings, pre-norm attention blocks, final layer norm.

    ``proj`` is the embedding head f(x) = sigmoid(pool(states) W_t + b_t) and
    ``cls`` the 14-way classification head used in phase 1.
    """

    def __init__(self, vocab_size: int, config: TfrConfig, rng: np.random.Generator):
        d = config.d
        self.config = config
        self.tok_emb = Parameter(rng.normal(0.0, 1.0, (vocab_size, d)))
        self.pos_emb = Parameter(rng.normal(0.0, 0.1, (config.max_len, d)))
        self.blocks = [SelfAttentionBlock(d, config.n_heads, rng) for _ in range(config.depth)]
        self.proj = Linear(d, config.d_embed, rng)
        self.cls = Linear(d, LB.N_CLASSES, rng)

    def states(self, ids, causal: bool = False) -> Tensor:
        ids = list(ids)
        t = len(ids)
        if t == 0:
            raise ValueError("cannot encode an empty token sequence")
        if t > self.config.max_len:
            raise ValueError(f"sequence of {t} tokens exceeds max_len={self.config.max_len}")
        x = T.add(T.gather_rows(self.tok_emb, ids), T.slice_rows(self.pos_emb, 0, t))
        bias = causal_bias(t) if causal else None
        for block in self.blocks:
            x = block(x, bias)
        return T.layer_norm(x)

    def embed(self, states: Tensor) -> Tensor:
        """f(x): sigmoid-squashed projection of the mean token state (1 x d_embed)."""
        return T.sigmoid(self.proj(losses.pooled(states)))

    def classify(self, states: Tensor) -> Tensor:
        return self.cls(losses.pooled(states))


def encode_text(tokens, encoder: TextEncoder, causal: bool = False):
    """Return (token_states t x d, f_x vector of length d_embed)."""
    states = encoder.states(tokens, causal=causal)
    fx = encoder.embed(states)
    return states, T.reshape(fx, (fx.shape[1],))


def refine_tokens(prefix_tokens, encoder: TextEncoder) -> Tensor:
    """Causally-masked token states for a generated prefix (no gradient recorded)."""
    if len(prefix_tokens) == 0:
        raise ValueError("refine_tokens needs a non-empty prefix")
    with T.no_grad():
        return encoder.states(prefix_tokens, causal=True)


def with_bos(vocab: Vocabulary, text: str) -> list:
    return [BOS] + vocab.encode(text)


def phase1_loss(encoder: TextEncoder, vocab: Vocabulary, segments, triplets, cls_items,
                config: TfrConfig):
    """Phase-1 objective and its two parts.

    ``cls_items`` is a list of (text, label_vector) used for the
    classification term; the triplet term embeds every segment that appears
    in ``triplets`` once and gathers anchor/positive/negative rows.
    """
    by_id = {s.id: s for s in segments}
    used = sorted({i for t in triplets for i in (t.anchor_id, t.positive_id, t.negative_id)})
    row = {sid: r for r, sid in enumerate(used)}
    embs = [encoder.embed(encoder.states(with_bos(vocab, by_id[sid].text))) for sid in used]
    E = T.concat_rows(embs)
    fa = T.gather_rows(E, [row[t.anchor_id] for t in triplets])
    fp = T.gather_rows(E, [row[t.positive_id] for t in triplets])
    fn = T.gather_rows(E, [row[t.negative_id] for t in triplets])
    l_trip = losses.triplet_loss(fa, fp, fn, config.beta, config.triplet_form)

    logits = T.concat_rows([encoder.classify(encoder.states(with_bos(vocab, text))) for text, _ in cls_items])
    l_cls = losses.bce_multilabel(logits, LB.binarize([lab for _, lab in cls_items]))
    return losses.tfr_loss(l_cls, l_trip, config.triplet_weight), l_cls, l_trip


def train_text_refiner(segments, triplets, config: TfrConfig, reports=None, vocab: Vocabulary | None = None,
                       on_step=None):
    """Fit the text encoder on classification + triplet losses by gradient descent.

    ``reports`` (list of (text, labels)) feeds the classification term; when
    omitted the segments themselves are used.  Returns (encoder, vocab, curve)
    where ``curve`` lists (step, total, cls, triplet) before each update and
    once more after the final one.
    """
    segments = list(segments)
    triplets = list(triplets)
    if not segments or not triplets:
        raise ValueError("phase-1 training needs a non-empty segment set and triplet set")
    cls_items = list(reports) if reports else [(s.text, s.labels) for s in segments]
    if vocab is None:
        vocab = Vocabulary.from_texts([s.text for s in segments] + [t for t, _ in cls_items])
    encoder = TextEncoder(len(vocab), config, derive(config.seed, "tfr", "init"))
    opt = GradientDescent(encoder.parameters(), config.lr, momentum=config.momentum)
    curve = []
    for step in range(config.steps + 1):
        total, l_cls, l_trip = phase1_loss(encoder, vocab, segments, triplets, cls_items, config)
        curve.append((step, total.item(), l_cls.item(), l_trip.item()))
        if on_step is not None:
            on_step(*curve[-1])
        if step == config.steps:
            break
        opt.zero_grad()
        T.backward(total)
        opt.step()
    log.info("phase 1: loss %.4f -> %.4f over %d steps", curve[0][1], curve[-1][1], config.steps)
    return encoder, vocab, curve


def save_text_refiner(path, encoder: TextEncoder, vocab: Vocabulary, curve=None):
    state = encoder.state_dict()
    payload = {
        "config": asdict(encoder.config),
        "vocab": vocab.to_list(),
        "text_encoder_hash": ckpt.params_hash(state),
        "curve": [list(c) for c in (curve or [])],
    }
    ckpt.save(path, "text_refiner", payload, {"text_encoder": state})


def load_text_refiner(path):
    """Return (encoder, vocab, document) from a phase-1 checkpoint."""
    doc = ckpt.load(path, kind="text_refiner")
    return text_refiner_from_doc(doc)


def text_refiner_from_doc(doc):
    config = TfrConfig(**doc["config"])
    vocab = Vocabulary(doc["vocab"])
    encoder = TextEncoder(len(vocab), config, derive(config.seed, "tfr", "init"))
    encoder.load_state_dict(doc["params"]["text_encoder"])
    return encoder, vocab, doc
