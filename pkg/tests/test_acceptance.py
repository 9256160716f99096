"""Acceptance gate: one test and one PASS/FAIL line per criterion.

Each check runs at its stated tolerance and runtime budget. Run directly with
``python tests/test_acceptance.py`` to print the verdicts without pytest.
"""

import contextlib
import hashlib
import io
import itertools
import math
import time
from fractions import Fraction

import numpy as np

from timefloats import cli
from timefloats.analog import AnalogConfig, code_to_resistance, demap_charge, pulse_and_integrate, rc_discharge_time
from timefloats.energy import efficiency_tops_per_watt, mac_energy
from timefloats.fp8 import Fp8, oracle_dot
from timefloats.pipeline import DEFAULT_CONFIG, ExponentSums, find_max_exponent, mac
from timefloats.training import Mlp, backward, forward, loss

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

SEED = 20240601
_FIRST_RUN: dict[int, str] = {}


def report(num: int, title: str, ok: bool, detail: str):
    line = f"criterion {num} [{title}]: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _cli(*argv) -> str:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.main(list(argv))
    assert code == 0, f"{argv} exited {code}"
    return buf.getvalue()


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _codes(rng, n, exps, signs=True):
    s = rng.integers(0, 2, n) if signs else np.zeros(n, dtype=int)
    return [Fp8(int(a), int(e), int(m)) for a, e, m in zip(s, exps, rng.integers(0, 16, n))]


# ---------------------------------------------------------------------------
# runners shared by the determinism check
# ---------------------------------------------------------------------------


def run_no_shift() -> tuple[str, int]:
    """Criterion 2 workload; returns a report of every raw value and the mismatch count."""
    rng = np.random.default_rng(SEED)
    lines, bad = [], 0
    for _ in range(10_000):
        n = int(rng.integers(1, 65))
        total = int(rng.integers(0, 31))
        xe = rng.integers(max(0, total - 15), min(15, total) + 1, n)
        x = _codes(rng, n, xe)
        w = _codes(rng, n, total - xe)
        ref = oracle_dot(x, w)
        t = mac(x, w)
        if Fraction(t.raw_value) != ref:
            bad += 1
        lines.append(f"{t.raw_value.hex()} {t.output} {ref}")
    return "\n".join(lines) + "\n", bad


def run_sensitivity_sweep() -> str:
    return _cli(
        "sweep", "--sigma", "0,0.02,0.05,0.1,0.2", "--mode", "exponent_only,mantissa_only",
        "--pairs", "100", "--length", "64", "--trials", "100", "--seed", "7",
    )


def run_train(engine: str, epochs: int) -> str:
    return _cli("train", "--engine", engine, "--epochs", str(epochs), "--sigma", "0", "--seed", "0")


def _body(text: str) -> list[str]:
    return [line for line in text.splitlines() if not line.startswith("#")]


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_criterion_1_energy_headline():
    out = _cli("energy")
    e = mac_energy(64)
    eff = efficiency_tops_per_watt(64)
    dev = abs(eff / 22.1 - 1)
    ok = math.isclose(e, 5.804e-12, rel_tol=1e-9) and dev < 0.005 and "5.804 pJ" in out and "22.05 TOPS/W" in out
    report(1, "energy headline", ok, f"{e * 1e12:.4f} pJ, {eff:.4f} TOPS/W, {dev:.3%} from 22.1")


def test_criterion_2_no_shift_oracle_equivalence():
    t0 = time.perf_counter()
    text, bad = run_no_shift()
    dt = time.perf_counter() - t0
    _FIRST_RUN.setdefault(2, _digest(text))
    report(2, "no-shift oracle equivalence", bad == 0 and dt < 10, f"{bad} mismatches in 10^4 pairs, {dt:.1f} s")


def test_criterion_3_truncation_bound():
    rng = np.random.default_rng(SEED + 3)
    t0 = time.perf_counter()
    violations, worst = 0, Fraction(0)
    for _ in range(10_000):
        x = _codes(rng, 64, rng.integers(0, 16, 64), signs=False)
        w = _codes(rng, 64, rng.integers(0, 16, 64), signs=False)
        t = mac(x, w)
        d = oracle_dot(x, w) - Fraction(t.raw_value)
        if t.e_max_id is None:
            continue
        ulp = Fraction(2) ** DEFAULT_CONFIG.scale_exp(t.e_max)
        if not 0 <= d < 64 * ulp:
            violations += 1
        worst = max(worst, d / ulp)
    dt = time.perf_counter() - t0
    report(
        3,
        "truncation bound 64 ULP",
        violations == 0 and dt < 30,
        f"{violations} violations in 10^4 pairs, worst gap {float(worst):.0f} ULP, {dt:.1f} s",
    )


def test_criterion_4_argmax():
    t0 = time.perf_counter()
    bad = checked = 0
    for n in range(1, 5):
        for vals in itertools.product(range(31), repeat=n):
            e, i = find_max_exponent(ExponentSums(vals, (True,) * n))
            m = max(vals)
            bad += not (e == m and vals[i] == m and i == vals.index(m))
            checked += 1
    rng = np.random.default_rng(SEED + 4)
    for _ in range(100_000):
        n = int(rng.integers(1, 65))
        vals = tuple(int(v) for v in rng.integers(0, 31, n))
        e, i = find_max_exponent(ExponentSums(vals, (True,) * n))
        m = max(vals)
        bad += not (e == m and vals[i] == m and i == vals.index(m))
        checked += 1
    dt = time.perf_counter() - t0
    report(4, "argmax correctness", bad == 0 and dt < 30, f"{bad} failures in {checked} lists, {dt:.1f} s")


def test_criterion_5_exponent_vs_mantissa_sensitivity():
    t0 = time.perf_counter()
    out = run_sensitivity_sweep()
    dt = time.perf_counter() - t0
    _FIRST_RUN.setdefault(5, _digest(out))
    rows = [r.split(",") for r in _body(out)[1:]]
    err = {(float(r[0]), r[1]): float(r[2]) for r in rows}
    sigmas = sorted({s for s, _ in err})
    order = all(err[(s, "exponent_only")] > err[(s, "mantissa_only")] for s in (0.05, 0.1))
    mono = all(
        err[(a, mode)] <= err[(b, mode)]
        for mode in ("exponent_only", "mantissa_only")
        for a, b in zip(sigmas, sigmas[1:])
    )
    detail = ", ".join(
        f"s={s}: exp {err[(s, 'exponent_only')]:.4g} man {err[(s, 'mantissa_only')]:.4g}" for s in (0.05, 0.1)
    )
    report(5, "exponent vs mantissa sensitivity", order and mono and dt < 60, f"{detail}, monotone={mono}, {dt:.1f} s")


def test_criterion_6_analog_demap():
    cfg = AnalogConfig()
    rng = np.random.default_rng(SEED + 6)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 65))
        scaled = rng.integers(0, 32, n)
        w = rng.integers(0, 16, n)
        q = pulse_and_integrate(scaled.tolist(), w.tolist(), cfg)
        p = float(demap_charge(q, int(scaled.sum()), cfg, hidden_bit=True))
        bad += round(p) != int((scaled * (w + 16)).sum())
    times = [rc_discharge_time(code_to_resistance(c, cfg), cfg) for c in range(16)]
    step = (times[-1] - times[0]) / 15
    lin = max(abs(t - (times[0] + c * step)) / t for c, t in enumerate(times))
    dt = time.perf_counter() - t0
    ok = bad == 0 and lin <= 1e-12 and dt < 10
    report(6, "analog de-mapping exactness", ok, f"{bad} mismatches in 10^4 vectors, affine residual {lin:.2e}, {dt:.1f} s")


def test_criterion_7_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    h = 1e-6
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = Mlp.init([2, 4, 2], seed=seed)
        x, target = rng.normal(size=2), rng.uniform(size=2)
        acts, pre = forward(net, x)
        _, grads = backward(net, acts, pre, target)
        for wm, g in zip(net.master_weights, grads):
            for idx in np.ndindex(*wm.shape):
                old = wm[idx]
                wm[idx] = old + h
                up = loss(forward(net, x)[0][-1], target)
                wm[idx] = old - h
                down = loss(forward(net, x)[0][-1], target)
                wm[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    dt = time.perf_counter() - t0
    report(7, "gradient check", worst < 1e-4 and dt < 5, f"max relative error {worst:.2e} over 10 seeds, {dt:.2f} s")


def _final_accuracy(out: str) -> float:
    return float(_body(out)[-1].split(",")[2])


def test_criterion_8_train_in_memory():
    t0 = time.perf_counter()
    ref = run_train("float_ref", 200)
    tf = run_train("timefloats", 300)
    dt = time.perf_counter() - t0
    _FIRST_RUN.setdefault(8, _digest(ref + tf))
    a_ref, a_tf = _final_accuracy(ref), _final_accuracy(tf)
    ok = a_ref >= 0.95 and a_tf >= 0.90 and dt < 120
    report(8, "train-in-memory demo", ok, f"float_ref {a_ref:.3f} @200, timefloats {a_tf:.3f} @300, {dt:.1f} s")


def test_criterion_9_determinism():
    runs = {
        2: lambda: run_no_shift()[0],
        5: run_sensitivity_sweep,
        8: lambda: run_train("float_ref", 200) + run_train("timefloats", 300),
    }
    same = {}
    for num, fn in runs.items():
        first = _FIRST_RUN.get(num) or _digest(fn())
        same[num] = first == _digest(fn())
    detail = ", ".join(f"criterion {k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())
    report(9, "determinism", all(same.values()), detail)


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    raise SystemExit(1 if failed else 0)
