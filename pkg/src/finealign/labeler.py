"""Report segmentation and a keyword-rule observation labeler.

The labeler is a deterministic stand-in for a learned report labeler.  For
each class it looks for mention cues; a mention is *negated* when a
negation cue sits within ``PRE_WINDOW`` tokens before it or ``POST_WINDOW``
tokens after it inside the same clause, and *hedged* likewise for hedge
cues.  Hedged mentions are uncertain, negated ones negative, others
positive; across mentions in one segment positive > uncertain > negative.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

from . import labels as LB

PRE_WINDOW = 6
POST_WINDOW = 3
CLAUSE_BREAKERS = frozenset({"but", "however", "although", "aside", "except", "whereas"})

_SENTENCE_SPLIT = re.compile(r"[.;\n]")
_STRIP = re.compile(r"[^a-z0-9\s]")
_HYPHEN = re.compile(r"(?<=[a-z0-9])-(?=[a-z0-9])")


def normalize_text(text: str) -> str:
    """Lowercase, join hyphenated words, replace other punctuation with spaces, collapse whitespace."""
    return " ".join(_STRIP.sub(" ", _HYPHEN.sub("", text.lower())).split())


def tokenize(text: str) -> list:
    return normalize_text(text).split()


SENTENCE_END = "."


def report_tokens(report: str) -> list:
    """Tokens of a whole report with ``SENTENCE_END`` closing every segment."""
    out = []
    for seg in segment_report(report):
        out.extend(seg.split())
        out.append(SENTENCE_END)
    return out


def detokenize(tokens) -> str:
    """Inverse of ``report_tokens`` up to whitespace and punctuation style."""
    return " ".join(tokens).replace(f" {SENTENCE_END}", SENTENCE_END)


def segment_report(report: str) -> list:
    """Split a report into normalised sentence-level segments."""
    out = []
    for piece in _SENTENCE_SPLIT.split(report):
        norm = normalize_text(piece)
        if norm:
            out.append(norm)
    return out


@dataclass(frozen=True)
class ClassRule:
    positive_cues: tuple
    negation_cues: tuple
    hedge_cues: tuple


def _cues(items) -> tuple:
    return tuple(tuple(c.split()) for c in items)


def load_rule_table(path=None) -> dict:
    """Read a rule table (class name -> cue lists); the bundled default if ``path`` is None."""
    if path is None:
        raw = json.loads(resources.files("finealign").joinpath("assets/rules.json").read_text())
    else:
        with open(path) as fh:
            raw = json.load(fh)
    table = {}
    for name in LB.CLASS_NAMES:
        if name not in raw:
            raise ValueError(f"rule table has no entry for class {name!r}")
        entry = raw[name]
        table[name] = ClassRule(
            _cues(entry["positive_cues"]),
            _cues(entry.get("negation_cues", [])),
            _cues(entry.get("hedge_cues", [])),
        )
    return table


_DEFAULT_TABLE = None


def default_rule_table() -> dict:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_rule_table()
    return _DEFAULT_TABLE


def _find(tokens, cue):
    n = len(cue)
    return [i for i in range(len(tokens) - n + 1) if tuple(tokens[i:i + n]) == cue]


def _cue_near(clause, cues, start, stop) -> bool:
    lo = max(0, start - PRE_WINDOW)
    hi = min(len(clause), stop + POST_WINDOW)
    for cue in cues:
        for i in _find(clause, cue):
            j = i + len(cue)
            overlaps = i < stop and j > start
            if not overlaps and i >= lo and j <= hi:
                return True
    return False


def _mentions(clause, cues) -> list:
    """Spans of mention cues, dropping any span that lies inside a longer one."""
    spans = {(s, s + len(cue)) for cue in cues for s in _find(clause, cue)}
    return sorted(a for a in spans if not any(b != a and b[0] <= a[0] and a[1] <= b[1] for b in spans))


def _clauses(tokens):
    cur = []
    for tok in tokens:
        if tok in CLAUSE_BREAKERS:
            if cur:
                yield cur
            cur = []
        else:
            cur.append(tok)
    if cur:
        yield cur


def stub_labeler(segment_text: str, table: dict | None = None) -> tuple:
    """14-entry label vector for one segment."""
    table = table or default_rule_table()
    rank = {LB.POSITIVE: 3, LB.UNCERTAIN: 2, LB.NEGATIVE: 1, LB.BLANK: 0}
    clauses = list(_clauses(tokenize(segment_text)))
    out = []
    for name in LB.CLASS_NAMES:
        rule = table[name]
        state = LB.BLANK
        for clause in clauses:
            for s, e in _mentions(clause, rule.positive_cues):
                if _cue_near(clause, rule.hedge_cues, s, e):
                    found = LB.UNCERTAIN
                elif _cue_near(clause, rule.negation_cues, s, e):
                    found = LB.NEGATIVE
                else:
                    found = LB.POSITIVE
                if rank[found] > rank[state]:
                    state = found
        out.append(state)
    return tuple(out)


def label_report(report: str, table: dict | None = None) -> tuple:
    """Report-level labels: merge of the per-segment labels."""
    return LB.merge([stub_labeler(s, table) for s in segment_report(report)])
