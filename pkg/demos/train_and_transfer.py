"""Train rule memory on the training suite, then carry it to unseen tasks.

Run from the repository root:

    python3 demos/train_and_transfer.py
"""

import tempfile
from pathlib import Path

from metapolicy import MetaPolicyMemory, RunConfig, run_baseline, run_inference, run_training
from metapolicy.admissibility import GuardConfig
from metapolicy.cli import rules_inspect

ROOT = Path(__file__).resolve().parent.parent
TRAIN = ROOT / "suites" / "train_small"
TEST = ROOT / "suites" / "test_small"


def main() -> None:
    work = Path(tempfile.mkdtemp(prefix="mpr-demo-"))
    memory_path = work / "memory.mpm"

    # Five rounds on the twelve training tasks with every policy defect on.
    reports, memory = run_training(
        RunConfig(mode="train", task_dir=TRAIN, rounds=5, seed=7, memory_out=memory_path)
    )
    print("training accuracy per round:", [f"{r.accuracy:.1f}" for r in reports])

    baseline = run_baseline(RunConfig(mode="baseline", task_dir=TRAIN, rounds=5, seed=7))
    print("per-task retry baseline:    ", [f"{r.accuracy:.1f}" for r in baseline])

    print(f"\nlearned {len(memory)} rules:")
    print(rules_inspect(memory_path))

    # Held-out tasks share shapes with the training tasks but no names.
    empty_path = work / "empty.mpm"
    MetaPolicyMemory().save(empty_path)
    print("\nheld-out suite, one pass with frozen memory:")
    for label, mem, guard in [
        ("empty memory, guard off", empty_path, False),
        ("empty memory, guard on ", empty_path, True),
        ("trained memory, guard on", memory_path, True),
    ]:
        rep = run_inference(
            RunConfig(mode="infer", task_dir=TEST, memory_in=mem, seed=7, guard=GuardConfig(enabled=guard))
        )
        print(f"  {label}: {rep.solved}/{rep.total} solved, {rep.invalid_steps} invalid steps")
    print(f"\nartifacts in {work}")


if __name__ == "__main__":
    main()
