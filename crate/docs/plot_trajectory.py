"""Plot the CSV written by `nls evolve`.

Usage: python docs/plot_trajectory.py trajectory.csv [out.png]
"""

import io
import json
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def load(path):
    with open(path) as f:
        first = f.readline()
        meta = json.loads(first[2:]) if first.startswith("# ") else {}
        rest = f.read() if meta else first + f.read()
    return meta, pd.read_csv(io.StringIO(rest))


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    meta, df = load(sys.argv[1])
    out = sys.argv[2] if len(sys.argv) > 2 else "trajectory.png"
    fig, ax = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    ax[0, 0].semilogy(df.t, df.abs_z2)
    ax[0, 0].set_ylabel("|z|^2")
    ax[0, 1].plot(df.t, df.omega)
    ax[0, 1].set_ylabel("omega")
    ax[1, 0].plot(df.t, df.eta_h1_weighted, label="weighted H1")
    ax[1, 0].plot(df.t, df.eta_tilde, label="eta tilde")
    ax[1, 0].set_ylabel("|eta|")
    ax[1, 0].legend()
    ax[1, 1].plot(df.t, df.Q - df.Q.iloc[0], label="Q")
    ax[1, 1].plot(df.t, df.E - df.E.iloc[0], label="E")
    ax[1, 1].set_ylabel("drift")
    ax[1, 1].legend()
    for a in ax[1]:
        a.set_xlabel("t")
    cfg = meta.get("config", {})
    if cfg:
        fig.suptitle(f"p = {cfg.get('p')}, delta = {cfg.get('delta')}, n = {cfg.get('n')}")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
