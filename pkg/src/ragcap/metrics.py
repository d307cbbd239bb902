"""From-scratch caption evaluation: tokenizer, BLEU, ROUGE-L, CIDEr-D.

All metrics operate on token lists produced by :func:`tokenize`, which is
deterministic and documented so fixture values stay stable:

* lowercase everything;
* the characters ``. , ! ? : ; " ( ) [ ]`` become standalone tokens;
* CJK codepoints (Han, kana, Hangul) become standalone tokens;
* split on all Unicode whitespace.

Scores: BLEU is corpus-level clipped n-gram precision with a brevity
penalty and no smoothing. ROUGE-L is the LCS F-score with beta = 1.2,
maxed over references and averaged over instances. CIDEr-D is TF-IDF
weighted clipped cosine similarity over n-grams up to 4, with a Gaussian
length penalty (sigma = 6) and a factor of 10, averaged over references
and n, where document frequencies count per-instance reference sets.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import IngestError, RagcapError

TokenizedCaption = list[str]

_SPLIT_CHARS = set('.,!?:;"()[]')
_CJK_RANGES = (
    (0x3040, 0x30FF),   # hiragana + katakana
    (0x3400, 0x4DBF),   # CJK extension A
    (0x4E00, 0x9FFF),   # CJK unified ideographs
    (0xAC00, 0xD7AF),   # hangul syllables
    (0xF900, 0xFAFF),   # CJK compatibility ideographs
)

CIDER_SIGMA = 6.0
CIDER_MAX_N = 4
ROUGE_BETA = 1.2


def _is_cjk(char: str) -> bool:
    point = ord(char)
    return any(lo <= point <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> TokenizedCaption:
    """Deterministic lowercasing tokenizer; empty input gives an empty list."""
    pieces = []
    for char in text.lower():
        if char in _SPLIT_CHARS or _is_cjk(char):
            pieces.append(f" {char} ")
        else:
            pieces.append(char)
    return "".join(pieces).split()


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    """Counts of contiguous n-grams as tuples."""
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hypotheses: Sequence[TokenizedCaption],
    references: Sequence[Sequence[TokenizedCaption]],
    max_n: int,
) -> float:
    """Corpus BLEU with uniform weights over n = 1..max_n and no smoothing.

    The brevity penalty uses the closest reference length per instance,
    ties resolved toward the shorter reference.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must have equal length")
    if not hypotheses:
        raise ValueError("nothing to score")
    clipped = [0] * max_n
    totals = [0] * max_n
    hyp_length = 0
    ref_length = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every instance needs at least one reference")
        hyp_length += len(hyp)
        ref_length += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            hyp_counts = ngram_counts(hyp, n)
            max_ref: Counter = Counter()
            for ref in refs:
                for gram, count in ngram_counts(ref, n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            clipped[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    if hyp_length == 0:
        return 0.0
    precisions = [c / t if t else 0.0 for c, t in zip(clipped, totals)]
    if any(p == 0.0 for p in precisions):
        return 0.0
    geometric_mean = math.exp(sum(math.log(p) for p in precisions) / max_n)
    brevity = 1.0 if hyp_length >= ref_length else math.exp(1.0 - ref_length / hyp_length)
    return brevity * geometric_mean


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(
    hypothesis: TokenizedCaption,
    references: Sequence[TokenizedCaption],
    beta: float = ROUGE_BETA,
) -> float:
    """LCS F-score, maximum over references; empty hypothesis scores 0."""
    if not references:
        raise ValueError("at least one reference is required")
    if not hypothesis:
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = _lcs_length(hypothesis, ref)
        if lcs == 0:
            continue
        precision = lcs / len(hypothesis)
        recall = lcs / len(ref)
        score = ((1 + beta**2) * precision * recall) / (recall + beta**2 * precision)
        best = max(best, score)
    return best


def rouge_l_corpus(
    hypotheses: Sequence[TokenizedCaption],
    references: Sequence[Sequence[TokenizedCaption]],
) -> float:
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must have equal length")
    if not hypotheses:
        raise ValueError("nothing to score")
    return sum(rouge_l(h, r) for h, r in zip(hypotheses, references)) / len(hypotheses)


def _tfidf_vector(tokens: Sequence[str], n: int, idf) -> tuple[dict, float]:
    vec = {gram: count * idf(gram) for gram, count in ngram_counts(tokens, n).items()}
    norm = math.sqrt(sum(w * w for w in vec.values()))
    return vec, norm


def cider_d(
    hypotheses: Sequence[TokenizedCaption],
    references: Sequence[Sequence[TokenizedCaption]],
    corpus: Sequence[Sequence[TokenizedCaption]] | None = None,
    sigma: float = CIDER_SIGMA,
    max_n: int = CIDER_MAX_N,
) -> tuple[list[float], float]:
    """Per-instance CIDEr-D scores and their mean.

    ``corpus`` supplies the document-frequency base; it defaults to the
    reference sets being scored. Each instance's reference set counts as
    one document.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must have equal length")
    if corpus is None:
        corpus = references
    if not corpus:
        raise ValueError("document-frequency corpus must not be empty")

    document_frequency: Counter = Counter()
    for refs in corpus:
        seen = set()
        for ref in refs:
            for n in range(1, max_n + 1):
                seen.update(ngram_counts(ref, n))
        document_frequency.update(seen)
    log_corpus = math.log(len(corpus))

    def idf(gram) -> float:
        return log_corpus - math.log(max(1.0, document_frequency[gram]))

    per_instance = []
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every instance needs at least one reference")
        score_by_n = [0.0] * max_n
        hyp_vectors = [_tfidf_vector(hyp, n, idf) for n in range(1, max_n + 1)]
        for ref in refs:
            delta = float(len(hyp) - len(ref))
            penalty = math.exp(-(delta**2) / (2.0 * sigma**2))
            for n_index in range(max_n):
                hyp_vec, hyp_norm = hyp_vectors[n_index]
                ref_vec, ref_norm = _tfidf_vector(ref, n_index + 1, idf)
                numerator = sum(
                    min(weight, ref_vec.get(gram, 0.0)) * ref_vec.get(gram, 0.0)
                    for gram, weight in hyp_vec.items()
                )
                if hyp_norm and ref_norm:
                    score_by_n[n_index] += numerator / (hyp_norm * ref_norm) * penalty
        averaged = [10.0 * s / len(refs) for s in score_by_n]
        per_instance.append(sum(averaged) / max_n)
    mean = sum(per_instance) / len(per_instance) if per_instance else 0.0
    return per_instance, mean


@dataclass(frozen=True, slots=True)
class EvalReport:
    """Corpus metric scores plus per-instance CIDEr-D values."""

    language: str
    count: int
    bleu1: float
    bleu4: float
    rougeL: float
    ciderD: float
    per_instance_ciderD: tuple[float, ...]

    def to_json_dict(self) -> dict:
        return {
            "language": self.language,
            "count": self.count,
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "rougeL": self.rougeL,
            "ciderD": self.ciderD,
            "per_instance_ciderD": list(self.per_instance_ciderD),
        }


def load_references(path) -> dict[str, list[str]]:
    """Read a references file: id -> list of reference strings.

    Plain mapping JSON is accepted as-is; COCO-style annotation JSON (an
    ``annotations`` array of ``{image_id, caption}``) is converted, with
    image ids stringified.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read references {path}: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("annotations"), list):
        grouped: dict[str, list[str]] = {}
        for idx, ann in enumerate(data["annotations"]):
            if not isinstance(ann, dict) or "caption" not in ann or "image_id" not in ann:
                raise IngestError(f"annotation {idx}: expected image_id and caption")
            grouped.setdefault(str(ann["image_id"]), []).append(ann["caption"])
        return grouped
    if isinstance(data, dict) and all(isinstance(v, list) for v in data.values()):
        return {str(k): [str(t) for t in v] for k, v in data.items()}
    raise IngestError("references must be an id->captions mapping or COCO annotations")


def read_predictions(path) -> list[tuple[str, str]]:
    """Read predictions jsonl: (id, chosen caption) pairs, manifest line skipped."""
    pairs = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read predictions {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise IngestError(f"line {lineno}: expected an object")
        if "manifest" in obj and "chosen" not in obj:
            continue
        if "id" not in obj or "chosen" not in obj:
            raise IngestError(f"line {lineno}: prediction needs 'id' and 'chosen'")
        pairs.append((str(obj["id"]), obj["chosen"]))
    return pairs


def evaluate_run(predictions_path, references_path, language: str) -> EvalReport:
    """Score a predictions file against a references file."""
    predictions = read_predictions(predictions_path)
    if not predictions:
        raise IngestError("no predictions to evaluate")
    references = load_references(references_path)
    missing = [pid for pid, _ in predictions if pid not in references]
    if missing:
        raise RagcapError(f"missing references for id {missing[0]!r}")
    hyps = [tokenize(text) for _, text in predictions]
    refs = [[tokenize(r) for r in references[pid]] for pid, _ in predictions]
    per_instance, cider_mean = cider_d(hyps, refs)
    return EvalReport(
        language=language,
        count=len(predictions),
        bleu1=bleu(hyps, refs, max_n=1),
        bleu4=bleu(hyps, refs, max_n=4),
        rougeL=rouge_l_corpus(hyps, refs),
        ciderD=cider_mean,
        per_instance_ciderD=tuple(per_instance),
    )
