"""Monte-Carlo check of the retrieval-ratio harness.

A scorer that ignores its input should retrieve k/N of the correct texts on
average, whatever the negative-sampling mode; a perfect oracle retrieves all.
"""
import argparse
import random

import numpy as np

from rodgen.core import BBoxNorm
from rodgen.filter import RetrievalItem, build_retrieval_batches, render_visual_prompt, retrieval_ratio
from rodgen.gateway import OracleScorer, RandomScorer


def corpus(n_images: int, targets: int, phrases: int, seed: int) -> list[RetrievalItem]:
    rng = random.Random(seed)
    items = []
    for i in range(n_images):
        image = np.random.default_rng(seed * 1000 + i).integers(0, 256, (24, 24, 3), dtype=np.uint8)
        for j in range(targets):
            x, y = rng.uniform(0, 0.5), rng.uniform(0, 0.5)
            items.append(RetrievalItem(f"img{i}", image, BBoxNorm(x, y, x + 0.45, y + 0.45),
                                       tuple(f"img{i} t{j} p{k}" for k in range(phrases))))
    return items


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batches", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    items = corpus(40, 4, 4, args.seed)
    oracle = OracleScorer()
    for it in items:
        oracle.register(render_visual_prompt(it.image, it.bbox), it.expressions)
    print(f"{'N':>3} {'k':>2} {'mode':>5} {'expected':>9} {'random':>8} {'oracle':>8}")
    for n, k in [(10, 1), (10, 2), (20, 2), (20, 4), (40, 2)]:
        for mode in ("easy", "hard"):
            batches = build_retrieval_batches(items, n, k, args.batches, mode, random.Random(args.seed))
            r = retrieval_ratio(batches, RandomScorer(args.seed), k=k)
            o = retrieval_ratio(batches[:200], oracle, k=k)
            print(f"{n:>3} {k:>2} {mode:>5} {100 * k / n:>8.2f}% {r:>7.2f}% {o:>7.2f}%")


if __name__ == "__main__":
    main()
