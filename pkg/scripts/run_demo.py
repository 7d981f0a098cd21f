"""Run every stage on the synthetic corpus with mock services and print the run report."""
import argparse
import json
import tempfile
from pathlib import Path

from rodgen.config import validate_config
from rodgen.fixtures import write_demo_corpus
from rodgen.pipeline import Pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--local-mode", choices=("single", "cot"), default="single")
    args = ap.parse_args()
    out = Path(args.out_dir or tempfile.mkdtemp(prefix="rodgen-demo-"))
    paths = write_demo_corpus(out / "corpus")
    cfg = validate_config(mock=True, rng_seed=args.seed, local_mode=args.local_mode, split_ratios=[1, 1, 1],
                          inputs={k: str(v) for k, v in paths.items()})
    report = Pipeline(cfg, out / "run").run()
    for stage, rep in report["stages"].items():
        tp = rep["throughput"]
        print(f"{stage:12s} in={rep.get('in')!s:>4} out={rep.get('out')!s:>4} "
              f"{tp['per_image'] or '-':>14} {tp['per_instruction'] or '-':>16}  dropped={rep.get('dropped')}")
    stats = json.loads((out / "run/stats/stats.json").read_text())
    print(json.dumps({k: stats[k] for k in ("instructions", "mean_length_words", "vocabulary_size",
                                            "group_ratios", "diversity_mean_pairwise_cosine")}, indent=2))
    print(f"outputs in {out / 'run'}")


if __name__ == "__main__":
    main()
