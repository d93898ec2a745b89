"""Simulate the reference field, then train and score every (n, seed) cell.

    python3 scripts/run_sweep.py scripts/configs/desk.json
    python3 scripts/run_sweep.py            # full defaults, 15000 iterations

Prints the per-cell table, the per-n median and the CPU time used.
"""
import statistics
import sys
import time

from stacked_pinn import experiment


def main(argv):
    cfg = experiment.load_config(argv[0] if argv else None)
    t0 = time.process_time()
    experiment.simulate(cfg)
    results = experiment.sweep(cfg)
    cpu = time.process_time() - t0

    print("n,seed,relative_l2,stop_iteration")
    for r in results:
        print(f"{r.n},{r.seed},{r.report.relative_l2:.6g},{r.history.stop_iteration}")
    for n in cfg.sweep:
        errs = [r.report.relative_l2 for r in results if r.n == n]
        print(f"n={n}: median relative L2 {statistics.median(errs):.4f}")
    print(f"cpu {cpu:.0f}s, outputs in {cfg.out_dir}")


if __name__ == "__main__":
    main(sys.argv[1:])
