#!/usr/bin/env python3
"""Reference BLEU/ROUGE values from nltk and rouge-score for the metric tests."""

import itertools
import math

from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu
from rouge_score import rouge_scorer

PAIRS = {
    "fixture": (
        "the chest radiograph shows a small effusion in the left lower lobe",
        "chest radiograph shows a small left pleural effusion in the lower lobe",
    ),
    "short": ("small left effusion", "a small left pleural effusion is seen"),
}


def skip_bigram_f1(cand, ref, window):
    def pairs(t):
        out = {}
        for i, j in itertools.combinations(range(len(t)), 2):
            if j - i <= window:
                out[(t[i], t[j])] = out.get((t[i], t[j]), 0) + 1
        return out

    c, r = pairs(cand), pairs(ref)
    overlap = sum(min(n, r.get(g, 0)) for g, n in c.items())
    p = overlap / sum(c.values())
    q = overlap / sum(r.values())
    return p, q, (2 * p * q / (p + q) if p + q else 0.0)


def main():
    sm = SmoothingFunction()
    scorer = rouge_scorer.RougeScorer(["rouge1", "rouge2", "rougeL"], use_stemmer=False)
    for name, (cand, ref) in PAIRS.items():
        c, r = cand.split(), ref.split()
        print(name)
        print(f"  bleu_none      {sentence_bleu([r], c, smoothing_function=sm.method0):.12f}")
        print(f"  bleu_add_eps   {sentence_bleu([r], c, smoothing_function=sm.method1):.12f}")
        print(f"  bleu_add_one   {sentence_bleu([r], c, smoothing_function=sm.method2):.12f}")
        for key, s in scorer.score(ref, cand).items():
            print(f"  {key:<14} p={s.precision:.12f} r={s.recall:.12f} f={s.fmeasure:.12f}")
        p, q, f = skip_bigram_f1(c, r, 4)
        print(f"  rougeS4        p={p:.12f} r={q:.12f} f={f:.12f}")


if __name__ == "__main__":
    main()
