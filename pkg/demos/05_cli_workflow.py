"""The config-driven workflow end to end: write a config, validate it,
run the experiment battery, and export the assembled operator — the same
things the `cml-lab` command does from the shell.

Run:  python3 demos/05_cli_workflow.py
"""

import os
import tempfile

import cml_lab as cl
from cml_lab.cli import main as cli_main

CONFIG = """\
[map]
kind = perturbed_doubling
a = 0.05

[coupling]
kind = diffusive
epsilon = 0.05

[operator]
k = 1
n_bins = 16
quad = 4

[run]
experiments = eigen, spectral, correlation
seed = 42
output_dir = {out}
"""


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "reports")
        cfg_path = os.path.join(tmp, "experiment.cfg")
        with open(cfg_path, "w") as fh:
            fh.write(CONFIG.format(out=out))

        print("$ cml-lab validate experiment.cfg")
        cli_main(["validate", cfg_path])

        print("\n$ cml-lab run experiment.cfg")
        cli_main(["run", cfg_path])

        print("\nsummary.txt:")
        print(open(os.path.join(out, "summary.txt")).read())

        op_path = os.path.join(tmp, "operator.txt")
        print(f"$ cml-lab export-operator experiment.cfg -o operator.txt")
        cli_main(["export-operator", cfg_path, "-o", op_path])
        op = cl.load_operator(op_path)
        print(f"re-loaded operator: {op.fingerprint()}, "
              f"{op.matrix.nnz} stored entries")

        print("\nbad configs fail with every violation listed:")
        bad_path = os.path.join(tmp, "bad.cfg")
        with open(bad_path, "w") as fh:
            fh.write("[coupling]\nepsilon = 0.7\n\n[metric]\ntheta = 1.0\n")
        code = cli_main(["validate", bad_path])
        print("exit code:", code)


if __name__ == "__main__":
    main()
