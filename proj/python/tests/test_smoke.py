# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ------------------------------------------------------------------------

import json
import math

import numpy as np
import pytest

import umimo


def small(seed=3):
    s = umimo.NetworkScenario()
    s.L, s.K, s.M, s.seed = 2, 2, 16, seed
    return s


def test_version():
    assert umimo.__version__


def test_noise_power():
    assert umimo.noise_power_dbm(20e6, 4.0) == pytest.approx(-94.99, abs=5e-3)


def test_covariances_are_hermitian_with_exact_diagonal():
    s = small()
    cov = umimo.covariances(s)
    assert len(cov) == s.L * s.L * s.K
    for r in cov:
        assert r.shape == (16, 16)
        assert np.allclose(r, r.conj().T)
        assert np.all(np.diag(r).real == np.diag(r).real[0])


def test_optimal_combining_dominates():
    s = small()
    for rx in ("MF", "ZF"):
        none = umimo.sinr(s, rx, "none")
        opt = umimo.sinr(s, rx, "optimal")
        assert none.shape == (4,)
        assert np.all(opt >= none * (1 - 1e-9))


def test_maxmin_meets_its_target():
    r = umimo.maxmin(small(), "MF", "optimal")
    assert r["gamma_star"] > 0
    assert np.min(r["sinr"]) >= r["gamma_star"] * (1 - 1e-3)


def test_scenario_json_round_trip_and_errors():
    s = small(7)
    back = umimo.NetworkScenario.from_json(s.to_json())
    assert back.M == 16 and back.seed == 7
    doc = json.loads(s.to_json())
    doc["schema"] = 9
    with pytest.raises(ValueError):
        umimo.NetworkScenario.from_json(json.dumps(doc))


def test_run_experiment_and_cdf():
    doc = json.loads(small().to_json())
    doc["experiment"] = {
        "n_drops": 2,
        "configs": [{"label": "mf_none", "lsfp": "none"}, {"label": "mf_lsfp", "lsfp": "optimal"}],
    }
    out = umimo.run_experiment(json.dumps(doc))
    assert out["failures"] == []
    assert len(out["mf_lsfp"]["sinr"]) == 8
    assert np.all(out["mf_lsfp"]["sinr"] >= out["mf_none"]["sinr"] * (1 - 1e-9))
    x, F, q05, median = umimo.compute_cdf([1.0, 2.0, 3.0, 4.0])
    assert F == [0.25, 0.5, 0.75, 1.0]
    assert q05 == 1.0 and median == 2.0
    assert not math.isnan(out["mf_none"]["sinr_q05_db"])
