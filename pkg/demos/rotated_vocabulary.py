"""Two-stage alignment of a synthetic vocabulary and its rotated copy.

Solves on the 500 most frequent words, refines on 3000, and evaluates
CSLS translation on the solved words and on 1000 further words.

    python3 demos/rotated_vocabulary.py [--restarts 64]
"""

import argparse
import time

import numpy as np

from invariot.embeddings import (
    BilingualDictionary,
    default_embedding_config,
    evaluate_precision,
    rotated_vocabulary,
    translate,
    two_stage_solve,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--vocab", type=int, default=3000)
    parser.add_argument("--dim", type=int, default=50)
    parser.add_argument("--stage1", type=int, default=500)
    parser.add_argument("--restarts", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    src, tgt, Q = rotated_vocabulary(V=args.vocab, d=args.dim, extra=1000, seed=args.seed)
    cfg = default_embedding_config(args.dim, stage1_size=args.stage1, stage2_vocab=args.vocab,
                                   restarts=args.restarts, seed=args.seed)
    t0 = time.perf_counter()
    res = two_stage_solve(src.vectors, tgt.vectors, cfg)
    print(f"solve: {time.perf_counter() - t0:.1f} s, stage 1 {len(res.stage1.trace)} iterations "
          f"(start {res.stage1.restart}), stage 2 {len(res.stage2.trace)} iterations")
    P = res.stage2.map.matrix
    print(f"||P - Q^T||_F = {np.linalg.norm(P - Q.T):.2e}")
    for name, toks in (("solved words", src.tokens[:args.vocab]), ("out-of-sample", src.tokens[args.vocab:])):
        qt, ranked = translate(src, tgt, P, query_tokens=toks, topk=10)
        scores = evaluate_precision(ranked, BilingualDictionary.identity(qt), qt, tgt.tokens)
        print(f"{name:>14}: " + " ".join(f"{k}={scores[k]:.4f}" for k in ("P@1", "P@5", "P@10")))


if __name__ == "__main__":
    main()
