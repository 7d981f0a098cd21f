"""Write the 3-image synthetic corpus and a matching mock-mode config."""
import argparse
import json
from pathlib import Path

from rodgen.fixtures import write_demo_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", nargs="?", default="demo")
    args = ap.parse_args()
    out = Path(args.out_dir)
    paths = write_demo_corpus(out / "corpus")
    cfg = {"mock": True, "split_ratios": [1, 1, 1], "inputs": {k: str(v) for k, v in paths.items()}}
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"corpus in {out / 'corpus'}, config in {out / 'config.json'}")


if __name__ == "__main__":
    main()
