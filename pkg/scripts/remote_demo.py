#!/usr/bin/env python3
"""Optional demo: drive the full workflow against a real chat-completions
endpoint on a small adult-income-style sample.

The nine-dataset benchmark behind the published comparison table needs paid
frontier-model access and the complete dataset suite, so it is not
reproducible here; this script exercises the same remote path end to end on
a synthetic sample so any compatible endpoint can be plugged in.

Usage:
    export MY_API_KEY=...
    python scripts/remote_demo.py --endpoint https://api.example.com/v1/chat/completions \
        --model gpt-4o --api-key-env MY_API_KEY [--out-dir runs]

The sample is synthesized locally (no dataset download); columns follow the
public adult-income schema: age, education, occupation, hours_per_week,
capital_gain, sex, income.
"""

import argparse
import random
import sys
import tempfile
from pathlib import Path

from pcsflow.cli import main as cli_main


def synthesize_adult_sample(path: Path, n: int = 120, seed: int = 0) -> None:
    rng = random.Random(seed)
    educations = ["HS-grad", "Some-college", "Bachelors", "Masters"]
    occupations = ["Adm-clerical", "Craft-repair", "Exec-managerial", "Sales", "Tech-support"]
    rows = ["age,education,occupation,hours_per_week,capital_gain,sex,income"]
    for i in range(n):
        age = rng.randint(18, 70)
        edu = rng.choice(educations)
        occ = rng.choice(occupations)
        hours = rng.randint(20, 60)
        gain = rng.choice([0, 0, 0, rng.randint(1000, 20000)])
        sex = rng.choice(["Male", "Female"])
        score = age * 0.02 + hours * 0.03 + (gain > 0) * 1.5 + educations.index(edu) * 0.4
        income = ">50K" if score + rng.gauss(0, 0.5) > 2.8 else "<=50K"
        if rng.random() < 0.05:
            age = ""  # missing, as in the raw source
        rows.append(f"{age},{edu},{occ},{hours},{gain},{sex},{income}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--endpoint", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--api-key-env", default=None)
    parser.add_argument("--out-dir", default="runs")
    parser.add_argument("--k", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    sample = Path(tempfile.mkdtemp()) / "adult_sample.csv"
    synthesize_adult_sample(sample)
    print(f"synthesized sample at {sample}")

    cli_args = [
        "run",
        "--data", str(sample),
        "--target", "income",
        "--backend", "remote",
        "--endpoint", args.endpoint,
        "--model", args.model,
        "--k", str(args.k),
        "--seed", str(args.seed),
        "--out-dir", args.out_dir,
    ]
    if args.api_key_env:
        cli_args += ["--api-key-env", args.api_key_env]
    return cli_main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
