"""How the two server-side screens see each attack.

Runs the Gaussian, mean-shift and graph-guided attacks and prints how often
each would be flagged by per-round screens set from the benign population:
the distance screen at the benign maximum and the similarity screen at the
95th benign percentile with the max score policy.
"""

from pathlib import Path

from fedmanip.config import ExperimentConfig
from fedmanip.harness import run_experiment

OUT = Path("out/demo-defenses")


def run(attack: str, **knobs):
    cfg = ExperimentConfig()
    cfg.rounds = 20
    cfg.attack = attack
    cfg.defense_score_policy = "max"
    for key, value in knobs.items():
        setattr(cfg, key, value)
    return run_experiment(cfg, OUT / attack)


def main() -> None:
    attacks = (("rmp", {"rmp_scale": 3.0}), ("alie", {"alie_z": 1.5}), ("augmp", {}))
    summaries = {attack: run(attack, **knobs) for attack, knobs in attacks}

    print("distance screen (threshold = per-round benign maximum):")
    for attack, _ in attacks:
        rate = summaries[attack]["monitor_flag_rates"]["distance"]["malicious"]
        print(f"  {attack:<6} flagged in {rate:.0%} of rounds")

    print("similarity screen (threshold = 95th benign percentile, max policy):")
    for attack, _ in attacks:
        rate = summaries[attack]["monitor_flag_rates"]["similarity"]["malicious"]
        print(f"  {attack:<6} flagged in {rate:.0%} of rounds")

    print(f"\nruns written to {OUT}/")


if __name__ == "__main__":
    main()
