"""Drive the rejection-rate simulations for one or more scenario files.

Example (desk scale, one-subgroup scenario A):

    python scripts/run_tables.py scenarios/scenario_a_one.json --nsim 500 --b 300

Writes a CSV per scenario into results/ and prints the aligned table.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from dosequiv.simharness import emit_table, load_scenario, run_scenario


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("scenarios", nargs="+", help="scenario JSON files")
    parser.add_argument("--nsim", type=int, default=500)
    parser.add_argument("--b", type=int, default=300)
    parser.add_argument("--alpha", type=float, default=0.1)
    parser.add_argument("--delta", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--outdir", default="results")
    args = parser.parse_args()

    outdir = pathlib.Path(args.outdir)
    outdir.mkdir(exist_ok=True)
    for path in args.scenarios:
        scenario = load_scenario(path)
        result = run_scenario(
            scenario, nsim=args.nsim, b=args.b, alpha=args.alpha,
            delta=args.delta, seed=args.seed, workers=args.workers,
        )
        csv_text, text = emit_table(result)
        out = outdir / (pathlib.Path(path).stem + ".csv")
        out.write_text(csv_text)
        print(f"== {path} -> {out}")
        print(text)


if __name__ == "__main__":
    main()
