"""Toy encoder-decoder report generator and phase-2 training."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import labels as LB
from . import losses
from . import tensor as T
from .attention import IfrConfig, IfrParams, MultiHeadAttentionParams, SaliencyMap, ifr_forward, mha, visual_classifier
from .jsonl import read_jsonl
from .layers import FeedForward, Linear, Module, SelfAttentionBlock, causal_bias
from .losses import LossWeights
from .optim import GradientDescent
from .rng import derive
from .tensor import Parameter, ShapeError, Tensor
from .text_encoder import BOS, EOS, TextEncoder, Vocabulary, refine_tokens, text_refiner_from_doc

log = logging.getLogger(__name__)


class MissingPhaseError(RuntimeError):
    """Phase 2 was asked to run without a phase-1 checkpoint."""


@dataclass
class ModelConfig:
    d: int = 64
    n_heads: int = 4
    n_encoder_blocks: int = 2
    n_decoder_blocks: int = 2
    n_patches: int = 16
    d_in: int = 16
    n_obs: int = LB.N_CLASSES
    vocab_size: int = 0
    max_len: int = 48
    ifr: IfrConfig = field(default_factory=IfrConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    use_patch_positions: bool = True
    # ablation toggles; all on is the full model
    use_ifr: bool = True
    use_tfr: bool = True
    use_ca: bool = True
    # optimisation
    steps: int = 500
    lr: float = 0.02
    momentum: float = 0.0
    clip: float = 5.0
    batch_size: int = 0  # 0 = full batch

    def __post_init__(self):
        if isinstance(self.ifr, dict):
            self.ifr = IfrConfig(**self.ifr)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for name in ("d", "n_heads", "n_encoder_blocks", "n_patches", "d_in", "n_obs", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_decoder_blocks < 0:
            raise ValueError("n_decoder_blocks must be >= 0")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")

    @property
    def effective_weights(self) -> LossWeights:
        w = copy.copy(self.weights)
        if not self.use_ca:
            w.lambda_itc = 0.0
        return w

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    id: str
    image: np.ndarray
    report: str
    labels: tuple
    saliency: SaliencyMap | None = None


def load_dataset(path, n_patches: int | None = None, normalize_saliency: bool = False) -> list:
    out = []
    for i, row in enumerate(read_jsonl(path)):
        flat = np.asarray(row["image"], dtype=np.float64)
        n = row.get("n_patches", n_patches)
        if n is None:
            raise ValueError(f"{path}: row {i} has no n_patches and none was configured")
        if flat.size % n:
            raise ShapeError(f"{path}: row {i} image of {flat.size} values is not divisible into {n} patches")
        sal = row.get("saliency")
        out.append(Sample(
            id=str(row.get("id", f"s{i}")),
            image=flat.reshape(n, -1),
            report=row["report"],
            labels=LB.validate(row["labels"]),
            saliency=SaliencyMap.from_dict(sal, normalize=normalize_saliency) if sal else None,
        ))
    return out


class DecoderBlock(Module):
    """Pre-norm decoder block: causal self-attention, memory cross-attention, feed-forward."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        self.self_attn = SelfAttentionBlock(d, n_heads, rng)
        self.cross = MultiHeadAttentionParams.init(d, n_heads, rng)

    def __call__(self, x: Tensor, self_bias, memory: Tensor, memory_bias) -> Tensor:
        x = self.self_attn(x, self_bias)
        return T.add(x, mha(T.layer_norm(x), memory, self.cross, bias=memory_bias))


class ReportModel(Module):
    """Trainable part of the generator (everything except the frozen text encoder)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.d
        self.patch_proj = Linear(config.d_in, d, rng)
        self.patch_pos = Parameter(rng.normal(0.0, 0.1, (config.n_patches, d)))
        self.encoder = [SelfAttentionBlock(d, config.n_heads, rng) for _ in range(config.n_encoder_blocks)]
        self.symptoms = Parameter(rng.uniform(-0.1, 0.1, (config.n_obs, d)))
        self.saliency_attn = MultiHeadAttentionParams.init(d, config.n_heads, rng)
        self.update_attn = MultiHeadAttentionParams.init(d, config.n_heads, rng)
        self.classifier = Linear(d, LB.N_CLASSES, rng)
        self.tok_emb = Parameter(rng.normal(0.0, 1.0, (config.vocab_size, d)))
        self.tok_pos = Parameter(rng.normal(0.0, 0.1, (config.max_len + 1, d)))
        self.decoder = [DecoderBlock(d, config.n_heads, rng) for _ in range(config.n_decoder_blocks)]
        self.cross_attn = MultiHeadAttentionParams.init(d, config.n_heads, rng)
        self.cross_ffn = FeedForward(d, 2 * d, rng)
        self.out = Linear(d, config.vocab_size, rng)

    @property
    def ifr_params(self) -> IfrParams:
        return IfrParams(self.saliency_attn, self.update_attn)


class ReportGenerator:
    """Report model + frozen text encoder + shared vocabulary."""

    def __init__(self, config: ModelConfig, text: TextEncoder, vocab: Vocabulary, text_hash: str):
        if config.vocab_size == 0:
            config.vocab_size = len(vocab)
        if config.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        if text.config.d != config.d:
            raise ValueError(f"text encoder width {text.config.d} != model width {config.d}")
        self.config = config
        self.text = text
        self.text.freeze()
        self.vocab = vocab
        self.text_hash = text_hash
        self.model = ReportModel(config, derive(config.seed, "model", "init"))
        self._w_cache = {}

    # -- forward pieces ----------------------------------------------------

    def encode_image(self, image) -> Tensor:
        cfg = self.config
        img = np.asarray(image, dtype=np.float64)
        if img.shape != (cfg.n_patches, cfg.d_in):
            raise ShapeError(f"image shape {img.shape} != ({cfg.n_patches}, {cfg.d_in})")
        return encode_image(img, self.model, cfg.use_patch_positions)

    def refine_image(self, V: Tensor, saliency: SaliencyMap | None) -> Tensor:
        C = self.model.symptoms
        if not self.config.use_ifr:
            return C
        S = saliency if saliency is not None else SaliencyMap.uniform(self.config.n_obs, self.config.n_patches)
        return ifr_forward(C, V, S, self.config.ifr, self.model.ifr_params)

    def text_features(self, ids) -> Tensor:
        key = tuple(ids)
        W = self._w_cache.get(key)
        if W is None:
            W = refine_tokens(list(ids), self.text)
            self._w_cache[key] = W
        return W

    def decoder_states(self, ids, V: Tensor, C_hat: Tensor, W: Tensor) -> Tensor:
        """h_{1:t}: token embeddings through the decoder blocks, each reading [V; C_hat; W]."""
        m = self.model
        t = len(ids)
        if t > self.config.max_len + 1:
            raise ValueError(f"decoder input of {t} tokens exceeds max_len+1={self.config.max_len + 1}")
        x = T.add(T.gather_rows(m.tok_emb, ids), T.slice_rows(m.tok_pos, 0, t))
        if m.decoder:
            memory = T.concat_rows([V, C_hat, W])
            mbias = memory_bias(t, V.shape[0] + C_hat.shape[0])
            bias = causal_bias(t)
            for block in m.decoder:
                x = block(x, bias, memory, mbias)
        return x

    def text_context(self, ids) -> Tensor:
        """Text rows placed in the decoder memory; zeros when the text path is ablated."""
        W = self.text_features(ids)
        if not self.config.use_tfr:
            W = Tensor(np.zeros(W.shape))
        return W

    def forward_logits(self, ids, V: Tensor, C_hat: Tensor) -> Tensor:
        W = self.text_context(ids)
        return decoder_logits(self.decoder_states(ids, V, C_hat, W), V, C_hat, W, self.model)

    # -- losses --------------------------------------------------------------

    def teacher_forced_loss(self, batch):
        """Composite loss over ``batch`` (list of Sample) and its three parts."""
        cfg = self.config
        ce_terms, cls_logits, img_pool, txt_pool = [], [], [], []
        for s in batch:
            target = self.vocab.encode(s.report)
            if len(target) + 1 > cfg.max_len:
                raise ValueError(f"sample {s.id}: report of {len(target)} tokens exceeds max_len={cfg.max_len}")
            ids = [BOS] + target
            V = self.encode_image(s.image)
            C_hat = self.refine_image(V, s.saliency)
            logits = self.forward_logits(ids, V, C_hat)
            ce_terms.append(losses.lm_cross_entropy(logits, target + [EOS]))
            cls_logits.append(T.reshape(visual_classifier(V, self.model.classifier.W, self.model.classifier.b),
                                        (1, LB.N_CLASSES)))
            img_pool.append(losses.pooled(V))
            txt_pool.append(losses.pooled(self.text_features(ids)))
        n = len(batch)
        l_ce = T.scale(T.add_n(ce_terms), 1.0 / n)
        l_cls = losses.bce_multilabel(T.concat_rows(cls_logits), LB.binarize([s.labels for s in batch]))
        w = cfg.effective_weights
        if n > 1 and w.lambda_itc != 0.0:
            l_itc = losses.itc_loss(T.concat_rows(img_pool), T.concat_rows(txt_pool), w.tau)
        else:
            l_itc = Tensor(0.0)
        total = losses.total_loss(l_ce, l_cls, l_itc, w)
        return total, {"ce": l_ce.item(), "cls_i": l_cls.item(), "itc": l_itc.item()}

    # -- inference -------------------------------------------------------------

    def decode_step(self, ids, V: Tensor, C_hat: Tensor) -> np.ndarray:
        """Next-token distribution after prefix ``ids`` (which starts with <bos>)."""
        W = self.text_context(ids)
        return decode_step(self.decoder_states(ids, V, C_hat, W), V, C_hat, W, self.model)

    def generate(self, image, saliency: SaliencyMap | None = None, max_len: int | None = None) -> list:
        """Greedy decoding; returns generated ids (ending in <eos> if one was produced)."""
        max_len = self.config.max_len if max_len is None else max_len
        with T.no_grad():
            V = self.encode_image(image)
            C_hat = self.refine_image(V, saliency)
            ids = [BOS]
            out = []
            while len(out) < max_len:
                dist = self.decode_step(ids, V, C_hat)
                nxt = int(np.argmax(dist))
                out.append(nxt)
                if nxt == EOS:
                    break
                ids.append(nxt)
        return out

    def generate_text(self, sample: Sample, max_len: int | None = None) -> str:
        return self.vocab.decode_text(self.generate(sample.image, sample.saliency, max_len))


def encode_image(image: np.ndarray, model: ReportModel, use_positions: bool = True) -> Tensor:
    """Patch projection (+ positions) followed by the self-attention encoder."""
    x = model.patch_proj(Tensor(image))
    if use_positions:
        x = T.add(x, model.patch_pos)
    for block in model.encoder:
        x = block(x)
    return x


def memory_bias(t: int, n_fixed: int) -> np.ndarray:
    """Mask for queries over [fixed rows; t text rows]: query i sees text rows <= i."""
    bias = np.zeros((t, n_fixed + t))
    bias[:, n_fixed:] = causal_bias(t)
    return bias


def decoder_logits(h: Tensor, V: Tensor, C_hat: Tensor, W: Tensor, model: ReportModel) -> Tensor:
    """Vocabulary logits for every position of ``h``.

    Each decoder row attends over [V; C_hat; W] (text rows causally masked),
    then a residual feed-forward and the output projection.
    """
    d = h.shape[1]
    for name, x in (("V", V), ("C_hat", C_hat), ("W", W)):
        if x.shape[1] != d:
            raise ShapeError(f"decode: {name} width {x.shape[1]} != decoder width {d}")
    t = h.shape[0]
    if W.shape[0] != t:
        raise ShapeError(f"decode: {W.shape[0]} text rows for {t} decoder positions")
    memory = T.concat_rows([V, C_hat, W])
    bias = memory_bias(t, V.shape[0] + C_hat.shape[0])
    u = T.add(h, mha(T.layer_norm(h), memory, model.cross_attn, bias=bias))
    u = T.add(u, model.cross_ffn(T.layer_norm(u)))
    return model.out(T.layer_norm(u))


def decode_step(h: Tensor, V: Tensor, C_hat: Tensor, W: Tensor, model: ReportModel) -> np.ndarray:
    logits = decoder_logits(h, V, C_hat, W, model)
    last = T.slice_rows(logits, logits.shape[0] - 1, logits.shape[0])
    return T.row_softmax(last).data[0]


# ---------------------------------------------------------------------------
# phase-2 training


def build_generator(config: ModelConfig, tfr_doc: dict) -> ReportGenerator:
    text, vocab, doc = text_refiner_from_doc(tfr_doc)
    return ReportGenerator(config, text, vocab, doc["text_encoder_hash"])


class Phase2Trainer:
    def __init__(self, gen: ReportGenerator, dataset):
        self.gen = gen
        self.dataset = list(dataset)
        if not self.dataset:
            raise ValueError("phase-2 training needs a non-empty dataset")
        cfg = gen.config
        self.opt = GradientDescent(gen.model.parameters(), cfg.lr, momentum=cfg.momentum, clip=cfg.clip)
        self.rng = derive(cfg.seed, "phase2", "batches")
        self.step = 0
        self.log = []

    def next_batch(self):
        bs = self.gen.config.batch_size
        if bs <= 0 or bs >= len(self.dataset):
            return self.dataset
        idx = np.sort(self.rng.choice(len(self.dataset), size=bs, replace=False))
        return [self.dataset[i] for i in idx]

    def run(self, until: int, on_step=None, verify_frozen: bool = False):
        text_before = ckpt.params_hash(self.gen.text.state_dict()) if verify_frozen else None
        while self.step < until:
            total, parts = self.gen.teacher_forced_loss(self.next_batch())
            row = (self.step, total.item(), parts["ce"], parts["cls_i"], parts["itc"])
            self.log.append(row)
            if on_step is not None:
                on_step(*row)
            self.opt.zero_grad()
            T.backward(total)
            self.opt.step()
            self.step += 1
            if verify_frozen and ckpt.params_hash(self.gen.text.state_dict()) != text_before:
                raise AssertionError(f"text encoder changed at step {self.step}")
        return self.log

    def final_loss(self):
        total, parts = self.gen.teacher_forced_loss(self.dataset)
        return total.item(), parts

    # -- checkpointing ------------------------------------------------------

    def save(self, path):
        gen = self.gen
        payload = {
            "config": gen.config.to_dict(),
            "vocab": gen.vocab.to_list(),
            "text_config": asdict(gen.text.config),
            "text_encoder_hash": gen.text_hash,
            "step": self.step,
            "rng_state": self.rng.bit_generator.state,
            "loss_log": [list(r) for r in self.log],
        }
        groups = {
            "model": gen.model.state_dict(),
            "text_encoder": gen.text.state_dict(),
            "optimizer": self.opt.state_dict(),
        }
        ckpt.save(path, "report_model", payload, groups)

    @classmethod
    def restore(cls, path, dataset) -> "Phase2Trainer":
        doc = ckpt.load(path, kind="report_model")
        gen = generator_from_doc(doc)
        trainer = cls(gen, dataset)
        trainer.opt.load_state_dict(doc["params"]["optimizer"])
        trainer.rng.bit_generator.state = doc["rng_state"]
        trainer.step = int(doc["step"])
        trainer.log = [tuple(r) for r in doc["loss_log"]]
        return trainer


def generator_from_doc(doc: dict) -> ReportGenerator:
    config = ModelConfig(**doc["config"])
    tfr_doc = {
        "config": doc["text_config"],
        "vocab": doc["vocab"],
        "text_encoder_hash": doc["text_encoder_hash"],
        "params": {"text_encoder": doc["params"]["text_encoder"]},
    }
    gen = build_generator(config, tfr_doc)
    gen.model.load_state_dict(doc["params"]["model"])
    return gen


def load_generator(path) -> ReportGenerator:
    return generator_from_doc(ckpt.load(path, kind="report_model"))


def train_phase2(dataset, config: ModelConfig, tfr_checkpoint, on_step=None) -> Phase2Trainer:
    """Phase 2: load the frozen text encoder and minimise the composite loss."""
    if tfr_checkpoint is None:
        raise MissingPhaseError("phase 2 requires a phase-1 (train-tfr) checkpoint")
    try:
        doc = ckpt.load(tfr_checkpoint, kind="text_refiner") if not isinstance(tfr_checkpoint, dict) else tfr_checkpoint
    except FileNotFoundError:
        raise MissingPhaseError(f"phase-1 (train-tfr) checkpoint not found: {tfr_checkpoint}") from None
    gen = build_generator(config, doc)
    if ckpt.params_hash(gen.text.state_dict()) != doc["text_encoder_hash"]:
        raise ValueError("phase-1 checkpoint parameters do not match their recorded hash")
    trainer = Phase2Trainer(gen, dataset)
    trainer.run(config.steps, on_step=on_step)
    return trainer
