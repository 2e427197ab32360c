import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from overlap_lab.model import (BaseChannelSpec, GeneralizedPerturbSpec, Model, PriorSpec,  # noqa: E402
                               SnrMatrix, rebuild)

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_oracles.json").read_text())


def model_from_instance(inst) -> Model:
    prior = PriorSpec(np.array(inst["atoms"]), np.array(inst["weights"]))
    if inst["snr"] is None:
        base = BaseChannelSpec("none")
    else:
        base = BaseChannelSpec("spiked-wigner" if inst["p"] == 2 else "tensor-p", inst["p"], inst["snr"])
    lam = None if inst["lam"] is None else SnrMatrix(np.array(inst["lam"]), 0.1)
    gen = None if inst["gen"] is None else GeneralizedPerturbSpec(*inst["gen"])
    return Model(prior, base, inst["n"], lam=lam, gen=gen)


def disorder_from_instance(model: Model, inst):
    return rebuild(model, np.array([inst["x_index"]]), np.array([inst["base_noise"]]),
                   np.array([inst["pert_noise"]]), np.array([inst["gen_noise"]]))


@pytest.fixture(params=sorted(FROZEN["instances"]))
def frozen_instance(request):
    inst = FROZEN["instances"][request.param]
    model = model_from_instance(inst)
    return inst, model, disorder_from_instance(model, inst)
