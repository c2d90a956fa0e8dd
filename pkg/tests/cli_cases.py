"""Small-budget invocations of every subcommand, shared by the CLI and acceptance tests."""

import io
import os

from cellcycle.cli import run

PARTICLES = "index,x0,weight\n0,0.0,0.25\n1,1.0,0.25\n2,2.5,0.5\n"


def cases(workdir):
    """``name -> argv`` (without ``--output``); writes the input files needed by ``fm`` and ``push``."""
    a = os.path.join(workdir, "a.csv")
    b = os.path.join(workdir, "b.csv")
    with open(a, "w") as fh:
        fh.write(PARTICLES)
    with open(b, "w") as fh:
        fh.write("x0\n0.5\n1.5\n")
    return {
        "audit": ["audit", "--model", "affine1d", "--a", "0.5"],
        "simulate": ["simulate", "--model", "cellcycle1d", "--x0", "2", "--n", "50"],
        "simulate_many": ["simulate", "--x0", "1", "--n", "20", "--reps", "5"],
        "push": ["push", "--input", a, "--n", "3", "--particles", "500"],
        "fm": ["fm", a, b],
        "couple": ["couple", "--model", "cellcycle1d", "--x0", "5", "--y0", "0", "--n", "20", "--reps", "50"],
        "couple_kappa": ["couple", "--model", "cellcycle1d", "--x0", "20", "--y0", "0", "--n", "60", "--reps", "200",
                         "--kappa", "0.09"],
        "mix": ["mix", "--n-max", "8", "--particles", "2000"],
        "invariant": ["invariant", "--burn-in", "100", "--n-samples", "2000", "--thin", "5"],
        "clt": ["clt", "--n", "100", "--reps", "200", "--burn-in", "100", "--n-samples", "5000", "--shift", "1.0"],
        "lil": ["lil", "--n-max", "2000", "--reps", "10", "--burn-in", "100", "--n-samples", "5000", "--shift", "1.0"],
    }


def invoke(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def data_files(path):
    """Contents of every output file except the human-readable summary."""
    return {f: open(os.path.join(path, f), "rb").read() for f in sorted(os.listdir(path)) if f != "summary.txt"}
