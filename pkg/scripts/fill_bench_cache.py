"""Pre-train every benchmark (variant, seed) pair the acceptance suite
needs, populating the .bench_cache/ directory so pytest runs stay fast."""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import benchlib  # noqa: E402


def main() -> None:
    corpora = benchlib.benchmark_corpora()
    todo = [(v, s) for v in benchlib.VARIANTS for s in benchlib.SEEDS]
    for i, (variant, seed) in enumerate(todo):
        t0 = time.time()
        cached = benchlib.run_path(variant, seed).exists()
        rec = benchlib.ensure_run(variant, seed, corpora=corpora)
        status = "cached" if cached else f"{(time.time() - t0) / 60:.1f} min"
        print(
            f"[{i + 1}/{len(todo)}] {variant} seed {seed}: "
            f"test dice {rec['test_dice_pct']:.2f}% ({status})",
            flush=True,
        )


if __name__ == "__main__":
    main()
