import math

import numpy as np
import pytest

from efc.classifier import classify, classify_batch, energies, energy, predict
from efc.errors import SchemaMismatch
from efc.model import EfcModel, fit

from oracles import naive_energy

# energy of every flow over the six-flow fixture model (q=3, alpha=1/2),
# from exact couplings and high-precision fields
SIX_FLOW_ENERGIES = {
    (1, 1): -1.3702443177254537,
    (1, 2): -0.8583959764932264,
    (1, 3): 0.057894755380928746,
    (2, 1): -0.8485225673591114,
    (2, 2): -0.8485225673591114,
    (2, 3): 0.06776816451504372,
    (3, 1): -0.06321016315377592,
    (3, 2): -0.9162907318741551,
    (3, 3): 0.0,
}


@pytest.fixture
def six_model():
    flows = np.array([(1, 1), (1, 2), (2, 1), (2, 2), (1, 1), (3, 2)])
    return fit(flows, q=3, alpha=0.5, percentile=50)


@pytest.fixture
def random_model(rng):
    flows = rng.integers(1, 6, size=(60, 5))
    return fit(flows, q=5, alpha=0.3, percentile=90)


def test_six_flow_energies(six_model):
    for flow, expected in SIX_FLOW_ENERGIES.items():
        assert energy(six_model, flow) == pytest.approx(expected, abs=1e-12)


def test_all_gauge_flow_has_zero_energy(random_model):
    assert energy(random_model, [5] * 5) == 0.0


def test_single_feature_energy_is_negated_field():
    model = fit(np.array([[1], [1], [2], [3], [1]]), q=3, alpha=0.5)
    for a in (1, 2):
        assert energy(model, [a]) == -model.fields[0, a - 1]


def test_energy_matches_naive_loop(random_model, rng):
    flows = rng.integers(1, 6, size=(300, 5))
    fast = energies(random_model, flows)
    for flow, value in zip(flows, fast):
        ref = naive_energy(random_model.couplings, random_model.fields, list(flow), 5)
        assert abs(value - ref) <= 1e-10


def test_gauge_replacement_removes_exact_terms(random_model, rng):
    e, h = random_model.couplings, random_model.fields
    for flow in rng.integers(1, 5, size=(20, 5)):
        k = int(rng.integers(0, 5))
        removed = -h[k, flow[k] - 1]
        for j in range(5):
            if j != k and flow[j] != 5:
                i, jj = min(k, j), max(k, j)
                removed -= e[i, jj, flow[i] - 1, flow[jj] - 1]
        gauged = flow.copy()
        gauged[k] = 5
        assert energy(random_model, flow) - energy(random_model, gauged) == pytest.approx(removed, abs=1e-12)


def test_tie_at_cutoff_is_malicious(random_model, rng):
    flow = rng.integers(1, 6, size=5)
    e = energy(random_model, flow)
    assert classify(random_model.with_cutoff(e), flow).label == "malicious"
    assert classify(random_model.with_cutoff(math.nextafter(e, math.inf)), flow).label == "benign"


def test_alpha_one_model_flags_everything(rng):
    model = fit(rng.integers(1, 4, size=(30, 3)), q=3, alpha=1.0)
    verdicts = classify_batch(model, rng.integers(1, 4, size=(10, 3)))
    assert all(v.energy == 0.0 and v.is_malicious for v in verdicts)


def test_batch_purity(random_model, rng):
    flows = rng.integers(1, 6, size=(10_000, 5))
    batch = classify_batch(random_model, flows)
    assert batch == [classify(random_model, f) for f in flows]
    split = classify_batch(random_model, flows[:3333]) + classify_batch(random_model, flows[3333:])
    assert split == batch
    assert classify_batch(random_model, []) == []
    assert np.array_equal(predict(random_model, flows), [v.is_malicious for v in batch])


def test_monotone_threshold(random_model, rng):
    flows = rng.integers(1, 6, size=(200, 5))
    low = classify_batch(random_model.with_cutoff(-1.0), flows)
    high = classify_batch(random_model.with_cutoff(1.0), flows)
    for a, b in zip(low, high):
        assert not (not a.is_malicious and b.is_malicious)


def test_validation(random_model):
    with pytest.raises(SchemaMismatch):
        energy(random_model, [1, 2])
    with pytest.raises(ValueError, match="row 1"):
        energies(random_model, [[1] * 5, [9] * 5])


def test_model_rejects_nonfinite_cutoff(random_model):
    with pytest.raises(ValueError):
        EfcModel(None, random_model.couplings, random_model.fields, 5, 0.3, math.inf)
