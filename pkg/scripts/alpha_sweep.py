"""Share of candidates kept by the dynamic threshold as alpha1 varies (mock scorer, demo corpus)."""
import argparse
import tempfile
from pathlib import Path

from rodgen.config import validate_config
from rodgen.fixtures import write_demo_corpus
from rodgen.pipeline import Pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    args = ap.parse_args()
    root = Path(tempfile.mkdtemp(prefix="rodgen-alpha-"))
    paths = write_demo_corpus(root / "corpus")
    inputs = {k: str(v) for k, v in paths.items()}
    base = root / "base"
    Pipeline(validate_config(mock=True, inputs=inputs), base).run(["ingest", "global", "local"])
    print(f"{'alpha1':>6} {'in':>5} {'kept':>5} {'share':>7}")
    for a in args.alphas:
        out = root / f"a{a}"
        out.mkdir()
        for name in ("records.jsonl", "global.jsonl", "local.jsonl"):
            (out / name).write_bytes((base / name).read_bytes())
        rep = Pipeline(validate_config(mock=True, alpha1=a, inputs=inputs), out).run(["filter"])
        f = rep["stages"]["filter"]
        print(f"{a:>6.2f} {f['in']:>5} {f['out']:>5} {f['out'] / f['in']:>7.1%}")


if __name__ == "__main__":
    main()
