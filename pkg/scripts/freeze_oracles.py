"""Evaluate the loop-based oracles on fixed instances and store the results.

Run from the repository root:  python scripts/freeze_oracles.py
The output, tests/data/frozen_oracles.json, is committed; tests compare the
package against it so that a regression in either route is caught.
"""

import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
from overlap_lab.model import sample_snr_matrix  # noqa: E402

RADEMACHER_2 = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]

INSTANCES = {
    "k2_full": dict(n=3, atoms=RADEMACHER_2, weights=[0.25] * 4, snr=1.3, p=2,
                    lam=[[0.45, 0.15], [0.15, 0.42]], gen=(2, [1.0, -1.0], 0.17),
                    x_index=[3, 0, 2], seed=11),
    "tensor3": dict(n=3, atoms=[[-1.0], [0.5], [2.0]], weights=[0.2, 0.5, 0.3], snr=0.8, p=3,
                    lam=None, gen=None, x_index=[1, 2, 0], seed=12),
    "pert_only": dict(n=4, atoms=[[-1.0], [1.0]], weights=[0.5, 0.5], snr=None, p=2,
                      lam=[[1.2]], gen=(1, [1.0], 0.6), x_index=[0, 1, 1, 0], seed=13),
}


def noises(inst):
    rng = np.random.default_rng(inst["seed"])
    n, K = inst["n"], len(inst["atoms"][0])
    T = math.comb(n + inst["p"] - 1, inst["p"]) if inst["snr"] is not None else 0
    G = n ** inst["gen"][0] if inst["gen"] else 0
    return (rng.standard_normal(T).tolist(), rng.standard_normal((n, K)).tolist(),
            rng.standard_normal(G).tolist())


def freeze_instance(inst):
    zt, zp, zg = noises(inst)
    X = [inst["atoms"][a] for a in inst["x_index"]]

    def energy(x):
        return oracles.energy_oracle(x, X, zt, zp, zg, snr=inst["snr"], p=inst["p"],
                                     lam=inst["lam"], gen=inst["gen"])

    probs, log_z = oracles.posterior_oracle(inst["atoms"], inst["weights"], inst["n"], energy)
    combos = list(itertools.product(range(len(inst["atoms"])), repeat=inst["n"]))
    energies = [energy([inst["atoms"][a] for a in c]) for c in combos]
    q = oracles.posterior_overlap_oracle(inst["atoms"], inst["weights"], inst["n"], X, energy)
    return dict(inst, base_noise=zt, pert_noise=zp, gen_noise=zg, energies=energies,
                probs=[probs[c] for c in combos], log_z=log_z, mean_q=q.tolist())


def main():
    lam3 = sample_snr_matrix(3, 0.05, 7)
    lam_sq = [[0.45, 0.15], [0.15, 0.42]]
    out = dict(
        snr_k3_s005_seed7=dict(entries=lam3.entries.tolist(),
                               eigenvalues=oracles.snr_eigenvalues(lam3.entries)),
        sqrt_k2=dict(matrix=lam_sq, root=oracles.sqrt_oracle(lam_sq).tolist()),
        instances={k: freeze_instance(v) for k, v in INSTANCES.items()},
    )
    path = ROOT / "tests" / "data" / "frozen_oracles.json"
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
