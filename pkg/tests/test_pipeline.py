import itertools
import json
from fractions import Fraction

import numpy as np
import pytest

from timefloats.analog import VariabilityModel
from timefloats.fp8 import ZERO, Fp8, Fp8Array, decode, decode_array, encode, oracle_dot
from timefloats.pipeline import (
    DEFAULT_CONFIG,
    ExponentSums,
    PipelineConfig,
    PipelineError,
    add_exponents,
    crossbar_mac,
    digitize_and_reformat,
    find_max_exponent,
    mac,
    mac_batch,
    scale_mantissas,
)


def _sums(values):
    return ExponentSums(tuple(values), (True,) * len(values))


def _rand_vec(rng, n, exp=(0, 15), signed=True, zeros=True):
    e = rng.integers(exp[0], exp[1] + 1, n)
    m = rng.integers(0, 16, n)
    s = rng.integers(0, 2, n) if signed else np.zeros(n, dtype=int)
    out = [Fp8(int(a), int(b), int(c)) for a, b, c in zip(s, e, m)]
    if zeros:
        out = [ZERO if rng.random() < 0.05 else c for c in out]
    return out


def test_add_exponents_examples():
    assert add_exponents([0], [0]).sums == (0,)
    assert add_exponents([3, 7], [5, 2]).sums == (8, 9)
    assert add_exponents([15], [15]).sums == (30,)
    with pytest.raises(PipelineError):
        add_exponents([1], [1, 2])
    with pytest.raises(PipelineError):
        add_exponents([0] * 65, [0] * 65, rows=64)


def test_find_max_examples():
    assert find_max_exponent(_sums([5, 5, 5, 5])) == (5, 0)
    assert find_max_exponent(_sums([3, 9, 1, 7])) == (9, 1)
    assert find_max_exponent(_sums([12])) == (12, 0)
    with pytest.raises(PipelineError, match="empty exponent set"):
        find_max_exponent(ExponentSums((3, 4), (False, False)))


def test_find_max_skips_invalid():
    assert find_max_exponent(ExponentSums((30, 2, 4), (False, True, True))) == (4, 2)


def test_find_max_exhaustive_short():
    for n in range(1, 5):
        for vals in itertools.product(range(31), repeat=n):
            e, i = find_max_exponent(_sums(vals))
            assert e == max(vals) and i == vals.index(e)


def test_scale_mantissas_examples():
    cfg = DEFAULT_CONFIG
    shifts, scaled = scale_mantissas([13], _sums([10]), 10, cfg)
    assert (shifts, scaled) == ((0,), (29,))
    _, scaled = scale_mantissas([13], _sums([8]), 10, cfg)
    assert scaled == (7,)
    for code in range(16):
        _, scaled = scale_mantissas([code], _sums([0]), cfg.zeroing_threshold, cfg)
        assert scaled == (0,)


def test_crossbar_examples():
    assert crossbar_mac([0, 0], [3, 4], [False, True]) == (0, 0)
    assert crossbar_mac([29, 7], [0, 15], [False, False]) == (681, 0)
    pos, neg = crossbar_mac([11, 11], [5, 5], [False, True])
    assert pos == neg


def test_digitize_examples():
    assert digitize_and_reformat(0, 0, 20) == (ZERO, 0.0)
    out, raw = digitize_and_reformat(681, 0, 16)
    assert raw == 10.640625
    assert decode(out) == 10.5  # leading one plus four truncated bits


def test_mac_examples():
    t = mac([encode(1.5)], [encode(2.0)])
    assert t.raw_value == 3.0 and decode(t.output) == 3.0
    w = [encode(v) for v in (1.0, -2.0, 7.25)]
    t = mac([ZERO] * 3, w)
    assert t.output == ZERO and t.scaled_mantissas == (0, 0, 0) and t.e_max_id is None
    for a in (encode(0.375), encode(-5.5), Fp8(0, 15, 15)):
        assert mac([encode(1.0)] * 2, [a, -a]).raw_value == 0.0


def test_mac_rejects_bad_shapes():
    with pytest.raises(PipelineError):
        mac([encode(1.0)], [])
    with pytest.raises(PipelineError):
        mac([], [])


def test_no_shift_exactness():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = int(rng.integers(1, 65))
        total = int(rng.integers(0, 31))
        xe = rng.integers(max(0, total - 15), min(15, total) + 1, n)
        x = [Fp8(int(s), int(e), int(m)) for s, e, m in zip(rng.integers(0, 2, n), xe, rng.integers(0, 16, n))]
        w = [Fp8(int(s), total - int(e), int(m)) for s, e, m in zip(rng.integers(0, 2, n), xe, rng.integers(0, 16, n))]
        ref = oracle_dot(x, w)
        t = mac(x, w)
        assert Fraction(t.raw_value) == ref
        assert decode(t.output) == decode(encode(ref, "truncate"))


def test_truncation_bound_per_weight_significand():
    # each shifted term loses < 1 unit of the input significand, i.e. < sig(w) product units
    rng = np.random.default_rng(5)
    for _ in range(500):
        x = _rand_vec(rng, 64, signed=False)
        w = _rand_vec(rng, 64, signed=False)
        t = mac(x, w)
        if t.e_max_id is None:
            continue
        unit = Fraction(2) ** DEFAULT_CONFIG.scale_exp(t.e_max)
        bound = sum(16 + b.mantissa for b, v in zip(w, t.exponent_sums.valid_mask) if v) * unit
        d = oracle_dot(x, w) - Fraction(t.raw_value)
        assert 0 <= d < bound


def test_zeroing_contributes_nothing():
    rng = np.random.default_rng(2)
    for _ in range(200):
        x, w = _rand_vec(rng, 32), _rand_vec(rng, 32)
        t = mac(x, w)
        for d, s, v in zip(t.shifts, t.scaled_mantissas, t.exponent_sums.valid_mask):
            if not v or d >= DEFAULT_CONFIG.zeroing_threshold:
                assert s == 0


def test_scale_covariance():
    rng = np.random.default_rng(8)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        x, w = _rand_vec(rng, n, exp=(1, 11), zeros=False), _rand_vec(rng, n, exp=(1, 15), zeros=False)
        k = int(rng.integers(1, 5))
        xk = [Fp8(a.sign, a.exponent + k, a.mantissa) for a in x]
        assert mac(xk, w).raw_value == mac(x, w).raw_value * 2.0**k


def test_permutation_invariance():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(1, 64))
        x, w = _rand_vec(rng, n), _rand_vec(rng, n)
        perm = rng.permutation(n)
        a = mac(x, w)
        b = mac([x[i] for i in perm], [w[i] for i in perm])
        assert a.raw_value == b.raw_value and a.output == b.output


@pytest.mark.parametrize(
    "cfg",
    [
        DEFAULT_CONFIG,
        PipelineConfig(significand_mode="stored_4bit"),
        PipelineConfig(digitize_mode="adc4"),
        PipelineConfig(significand_mode="stored_4bit", digitize_mode="adc4"),
    ],
    ids=["hidden-ideal", "stored-ideal", "hidden-adc4", "stored-adc4"],
)
@pytest.mark.parametrize("sigmas", [(0.0, 0.0), (0.05, 0.0), (0.0, 0.05), (0.1, 0.1)])
def test_batch_matches_scalar(cfg, sigmas):
    rng = np.random.default_rng(17)
    se, sm = sigmas
    xs, ws, zes, zms, traces = [], [], [], [], []
    n = 24
    for k in range(40):
        x, w = _rand_vec(rng, n), _rand_vec(rng, n)
        vm = VariabilityModel(se, sm, seed=k)
        traces.append(mac(x, w, cfg, vm))
        g = np.random.default_rng(k)
        ze, zm = g.standard_normal(n), g.standard_normal(n)
        xs += x
        ws += w
        zes.append(ze)
        zms.append(zm)
    res = mac_batch(
        Fp8Array.from_list(xs).reshape(40, n),
        Fp8Array.from_list(ws).reshape(40, n),
        cfg,
        None,
        se,
        sm,
        np.array(zes),
        np.array(zms),
    )
    assert res.output.to_list() == [t.output for t in traces]
    assert list(res.raw_value) == [t.raw_value for t in traces]
    assert list(res.e_max) == [t.e_max for t in traces]
    assert list(res.e_max_id) == [-1 if t.e_max_id is None else t.e_max_id for t in traces]


def test_batch_broadcasts():
    rng = np.random.default_rng(4)
    x = Fp8Array.from_list(_rand_vec(rng, 16)).reshape(1, 16)
    w = Fp8Array.from_list(_rand_vec(rng, 48)).reshape(3, 16)
    res = mac_batch(x, w)
    assert res.output.shape == (3,)
    for r in range(3):
        assert res.output[r].to_list()[0] == mac(x.to_list(), w[r].to_list()).output
    assert np.array_equal(decode_array(res.output), [decode(mac(x.to_list(), w[r].to_list()).output) for r in range(3)])


def test_trace_json_round_trip():
    t = mac([encode(1.5), encode(-0.25)], [encode(2.0), encode(3.0)])
    d = json.loads(t.to_json())
    assert set(d) == {
        "exponent_sums",
        "e_max",
        "e_max_id",
        "shifts",
        "scaled_mantissas",
        "psum_pos",
        "psum_neg",
        "raw_value",
        "output",
        "step_energies",
    }
    assert Fp8.parse(d["output"]) == t.output
    assert d["raw_value"] == t.raw_value == 2.25


def test_config_validation():
    with pytest.raises(PipelineError):
        PipelineConfig(significand_mode="bogus")
    with pytest.raises(PipelineError):
        PipelineConfig(digitize_mode="bogus")
    assert PipelineConfig().zeroing_threshold == 5
    assert PipelineConfig(significand_mode="stored_4bit").zeroing_threshold == 4
