"""Corpus BLEU, ROUGE-L, clinical-efficacy P/R/F1, and whole-corpus evaluation."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass

from . import _kernels
from . import labels as LB
from .labeler import label_report, tokenize

BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates, references, n: int, epsilon: float = BLEU_EPSILON) -> float:
    """Corpus BLEU-n with one reference per candidate and uniform weights.

    Clipped n-gram counts and lengths are pooled over the corpus.  A zero
    (or undefined) precision is replaced by ``epsilon``.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("bleu_n of an empty corpus")
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for k in range(1, n + 1):
            c, r = _ngrams(cand, k), _ngrams(ref, k)
            matched[k - 1] += sum(min(cnt, r[g]) for g, cnt in c.items())
            total[k - 1] += max(len(cand) - k + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, total):
        p = m / t if m > 0 else epsilon
        log_p += math.log(p)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p / n)


def lcs_length(a, b) -> int:
    vocab = {}
    ia = [vocab.setdefault(w, len(vocab)) for w in a]
    ib = [vocab.setdefault(w, len(vocab)) for w in b]
    return _kernels.lcs_length(ia, ib)


def rouge_l_pair(cand, ref, beta: float = ROUGE_BETA) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    rec = lcs / len(ref)
    prec = lcs / len(cand)
    return (1 + beta ** 2) * rec * prec / (rec + beta ** 2 * prec)


def rouge_l(candidates, references, beta: float = ROUGE_BETA) -> float:
    """Mean LCS F-measure over candidate/reference pairs."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("rouge_l of an empty corpus")
    return sum(rouge_l_pair(c, r, beta) for c, r in zip(candidates, references)) / len(candidates)


def ce_prf(generated_labels, reference_labels) -> dict:
    """Micro precision/recall/F1 over all (sample, class) cells, positive = 'positive'."""
    if len(generated_labels) != len(reference_labels):
        raise ValueError(f"{len(generated_labels)} generated vs {len(reference_labels)} reference label vectors")
    tp = fp = fn = 0
    for g, r in zip(generated_labels, reference_labels):
        for gx, rx in zip(LB.validate(g), LB.validate(r)):
            gp, rp = gx == LB.POSITIVE, rx == LB.POSITIVE
            tp += gp and rp
            fp += gp and not rp
            fn += rp and not gp
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f1}


@dataclass
class EvalReport:
    bleu: list
    rouge_l: float
    ce: dict
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    def to_table(self) -> str:
        head = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "P", "R", "F1"]
        vals = [f"{b:.3f}" for b in self.bleu] + ["n/a", f"{self.rouge_l:.3f}"]
        vals += [f"{self.ce[k]:.3f}" for k in ("precision", "recall", "f1")]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        line1 = " | ".join(h.rjust(w) for h, w in zip(head, widths))
        line2 = " | ".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"{line1}\n{'-' * len(line1)}\n{line2}\n"


def evaluate_texts(candidates, references, table=None) -> tuple:
    """Score generated report strings against reference strings.

    Returns (EvalReport, per-sample rows).
    """
    cand_tok = [tokenize(c) for c in candidates]
    ref_tok = [tokenize(r) for r in references]
    gen_labels = [label_report(c, table) for c in candidates]
    ref_labels = [label_report(r, table) for r in references]
    report = EvalReport(
        bleu=[bleu_n(cand_tok, ref_tok, n) for n in range(1, 5)],
        rouge_l=rouge_l(cand_tok, ref_tok),
        ce=ce_prf(gen_labels, ref_labels),
        n_samples=len(candidates),
    )
    rows = []
    for i, (c, r) in enumerate(zip(cand_tok, ref_tok)):
        rows.append({
            "index": i,
            "bleu4": bleu_n([c], [r], 4),
            "rouge_l": rouge_l_pair(c, r),
            "exact": c == r,
        })
    return report, rows


def corpus_evaluate(generator, dataset, table=None) -> tuple:
    """Generate a report for every sample and score the corpus."""
    candidates = [generator.generate_text(s) for s in dataset]
    report, rows = evaluate_texts(candidates, [s.report for s in dataset], table)
    for row, s, cand in zip(rows, dataset, candidates):
        row["id"] = s.id
        row["generated"] = cand
    return report, rows


def write_rows_csv(path, rows):
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
