"""Run the shipped adversary strategies and write a summary table.

    python scripts/run_games.py --trials 1000 --seed 0 --out results/games.tsv
"""

import argparse
import time
from pathlib import Path

from kychain.games import STRATEGIES, run_strategy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--strategy", action="append", choices=sorted(STRATEGIES),
                    help="repeatable; default runs all of them")
    ap.add_argument("--out", type=Path, default=Path("results/games.tsv"))
    args = ap.parse_args()

    rows = ["game\tstrategy\ttrials\tvalid\twins\tdisqualified\tadvantage\tcertificates\taborts\tpassed\tseconds"]
    for name in args.strategy or STRATEGIES:
        t0 = time.perf_counter()
        results = run_strategy(name, args.trials, args.seed)
        secs = (time.perf_counter() - t0) / len(results)
        for r in results:
            aborts = ",".join(f"{k}:{v}" for k, v in sorted(r.aborts.items())) or "-"
            rows.append(f"{r.game}\t{r.strategy}\t{r.trials}\t{r.valid}\t{r.wins}\t{r.disqualified}\t"
                        f"{r.advantage:.4f}\t{r.certificates}\t{aborts}\t{r.passed}\t{secs:.2f}")
            print(f"{r.game:16} {r.strategy:22} wins={r.wins:<5} adv={r.advantage:.4f} passed={r.passed}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(rows) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
