"""Step through one episode before and after a single reflection.

The policy never opens containers.  The first attempt fails, the scripted
reflector turns the failure into a rule, and the retry follows it.

    python3 demos/one_episode.py
"""

from metapolicy import DefectProfile, MetaPolicyMemory, ScriptedPolicy, meta_policy_update
from metapolicy.harness import EpisodeOptions, run_episode
from metapolicy.suites import defect_fixtures


def show(traj) -> None:
    for i, step in enumerate(traj.steps[:8]):
        flag = "  (rejected)" if step.invalid else ""
        print(f"  {i:2d}  {step.action}{flag}")
    if len(traj.steps) > 8:
        print(f"  ... {len(traj.steps) - 8} more steps")
    print(f"  success: {traj.success}\n")


def main() -> None:
    task = defect_fixtures()["never_opens_closed"]
    policy = ScriptedPolicy(DefectProfile(never_opens_closed=True))
    memory = MetaPolicyMemory()
    opts = EpisodeOptions(guard=None)

    print(f"task {task.task_id}, goal: {', '.join(map(str, task.goal))}\n")
    first = run_episode(task, policy, memory, opts)
    show(first)

    for outcome, h in meta_policy_update(first, memory):
        print(f"{outcome.value:>6}  {memory.get(h).text}")
    print()

    second = run_episode(task, policy, memory, opts, round_no=2)
    show(second)


if __name__ == "__main__":
    main()
