"""Side-by-side federated runs: honest training versus a stealthy attack.

Runs the same seed twice, once with no adversaries and once with two
manipulating agents, then prints the accuracy trajectories next to each
other.  Outputs land in ./out/demo-benign-vs-attack/.
"""

from pathlib import Path

from fedmanip.config import ExperimentConfig
from fedmanip.harness import run_experiment

OUT = Path("out/demo-benign-vs-attack")


def configure(attack: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.rounds = 25
    cfg.attack = attack
    cfg.adversaries = 0 if attack == "none" else 2
    return cfg


def accuracy_curve(run_dir: Path) -> list[float]:
    lines = (run_dir / "metrics.csv").read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("global_accuracy")
    return [float(line.split(",")[col]) for line in lines[1:]]


def main() -> None:
    print("running the benign federation ...")
    benign = run_experiment(configure("none"), OUT / "benign")
    print("running the same federation with two manipulating agents ...")
    attacked = run_experiment(configure("augmp"), OUT / "augmp")

    curve_b = accuracy_curve(OUT / "benign")
    curve_a = accuracy_curve(OUT / "augmp")
    print("\nround   benign   attacked")
    for t in range(0, len(curve_b), 4):
        print(f"{t + 1:>5}   {curve_b[t]:.3f}    {curve_a[t]:.3f}")
    print(f"\nfinal benign accuracy    {benign['final_global_accuracy']:.3f}")
    print(f"final attacked accuracy  {attacked['final_global_accuracy']:.3f}")
    stealth = attacked["stealth"]
    print(f"attack stealth (both constraints, per round): {stealth['joint_round_rate']:.0%}")
    print(f"runs written to {OUT}/")


if __name__ == "__main__":
    main()
