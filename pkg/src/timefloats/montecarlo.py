"""Monte Carlo sensitivity of the MAC to exponent vs. mantissa variability.

Every (pair, trial) draws its noise from ``default_rng([seed, pair, trial])``,
so results do not depend on evaluation order and any subset can be re-run
in isolation with :func:`timefloats.pipeline.mac`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analog import AnalogConfig, VariabilityModel
from .fp8 import BIAS, MAN_MAX, Fp8, Fp8Array, decode_array, oracle_dot
from .pipeline import DEFAULT_CONFIG, PipelineConfig, mac_batch

MODES = ("exponent_only", "mantissa_only", "both")
METRICS = ("raw", "output")
CSV_FIELDS = ("sigma", "mode", "mean_rel_err", "p50", "p95", "trials", "seed")

Pair = tuple[Sequence[Fp8], Sequence[Fp8]]


@dataclass(frozen=True)
class ErrorStats:
    sigma: float
    mode: str
    mean_rel_err: float
    p50: float
    p95: float
    trials: int
    seed: int

    def csv_row(self) -> list[str]:
        return [
            repr(float(self.sigma)),
            self.mode,
            f"{self.mean_rel_err:.10g}",
            f"{self.p50:.10g}",
            f"{self.p95:.10g}",
            str(self.trials),
            str(self.seed),
        ]


def mode_model(sigma: float, mode: str, seed: int = 0, trials: int = 100) -> VariabilityModel:
    """Variability model that perturbs only the stage(s) named by ``mode``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return VariabilityModel(
        sigma_exponent=sigma if mode in ("exponent_only", "both") else 0.0,
        sigma_mantissa=sigma if mode in ("mantissa_only", "both") else 0.0,
        seed=seed,
        trials=trials,
    )


def random_workload(
    n_pairs: int = 100,
    length: int = 64,
    seed: int = 0,
    exp_range: tuple[int, int] = (BIAS - 2, BIAS),
    signed: bool = False,
) -> list[Pair]:
    """Random operand pairs with exponent codes drawn from ``exp_range`` (inclusive).

    The default range keeps operands in [1/4, 2), so a 64-term product sum
    stays inside the representable output range.
    """
    rng = np.random.default_rng(seed)
    lo, hi = exp_range
    pairs = []
    for _ in range(n_pairs):
        vecs = []
        for _ in range(2):
            e = rng.integers(lo, hi + 1, size=length)
            m = rng.integers(0, MAN_MAX + 1, size=length)
            s = rng.integers(0, 2, size=length) if signed else np.zeros(length, dtype=np.int64)
            vecs.append([Fp8(int(a), int(b), int(c)) for a, b, c in zip(s, e, m)])
        pairs.append((vecs[0], vecs[1]))
    return pairs


def trial_noise(seed: int, pair: int, trial: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Exponent-path and mantissa-path draws for one (pair, trial).

    Trials come in antithetic couples: odd trial ``2k+1`` reuses the stream of
    trial ``2k`` with every draw negated.
    """
    rng = np.random.default_rng([seed, pair, trial // 2])
    z_exp, z_man = rng.standard_normal(n), rng.standard_normal(n)
    if trial % 2:
        return -z_exp, -z_man
    return z_exp, z_man


def _abs_errors(
    workload: Sequence[Pair],
    vm: VariabilityModel,
    cfg: PipelineConfig,
    analog: AnalogConfig | None,
    metric: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Absolute errors ``(pairs, trials)`` and the exact reference per pair."""
    if not workload:
        raise ValueError("empty workload")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    errs = np.empty((len(workload), vm.trials))
    ref = np.array([float(oracle_dot(x, w)) for x, w in workload])
    by_len: dict[int, list[int]] = {}
    for i, (x, _) in enumerate(workload):
        by_len.setdefault(len(x), []).append(i)
    for n, idx in by_len.items():
        xs = Fp8Array.from_list([c for i in idx for c in workload[i][0]]).reshape(len(idx), 1, n)
        ws = Fp8Array.from_list([c for i in idx for c in workload[i][1]]).reshape(len(idx), 1, n)
        shape = (len(idx), vm.trials, n)
        z_exp = np.empty(shape)
        z_man = np.empty(shape)
        for a, i in enumerate(idx):
            for t in range(vm.trials):
                z_exp[a, t], z_man[a, t] = trial_noise(vm.seed, i, t, n)
        res = mac_batch(
            xs.broadcast_to(shape),
            ws.broadcast_to(shape),
            cfg,
            analog,
            vm.sigma_exponent,
            vm.sigma_mantissa,
            z_exp,
            z_man,
        )
        got = res.raw_value if metric == "raw" else decode_array(res.output)
        errs[idx] = np.abs(got - ref[idx, None])
    return errs, ref


def relative_errors(
    workload: Sequence[Pair],
    vm: VariabilityModel,
    cfg: PipelineConfig = DEFAULT_CONFIG,
    analog: AnalogConfig | None = None,
    metric: str = "raw",
) -> np.ndarray:
    """Relative errors against the exact dot product, shape ``(pairs, trials)``.

    ``metric="raw"`` scores the product sum before it is packed into an output
    word; ``"output"`` scores the decoded Fp8 result. Where the exact value is
    zero the absolute error is reported.
    """
    errs, ref = _abs_errors(workload, vm, cfg, analog, metric)
    denom = np.where(ref == 0, 1.0, np.abs(ref))
    return errs / denom[:, None]


def monte_carlo_error(
    workload: Sequence[Pair],
    vm: VariabilityModel,
    mode: str,
    cfg: PipelineConfig = DEFAULT_CONFIG,
    analog: AnalogConfig | None = None,
    metric: str = "raw",
) -> ErrorStats:
    """``vm.trials`` perturbed evaluations per pair; ``mode`` picks which sigma applies.

    ``mode`` masks the model's sigmas: ``exponent_only`` drops
    ``sigma_mantissa`` and vice versa. The mean is formed as a per-pair sum of
    absolute errors divided once by ``trials * |y_ref|``, which keeps it
    monotone under the antithetic trial layout.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    eff = VariabilityModel(
        sigma_exponent=vm.sigma_exponent if mode != "mantissa_only" else 0.0,
        sigma_mantissa=vm.sigma_mantissa if mode != "exponent_only" else 0.0,
        seed=vm.seed,
        trials=vm.trials,
    )
    errs, ref = _abs_errors(workload, eff, cfg, analog, metric)
    denom = np.where(ref == 0, 1.0, np.abs(ref))
    per_pair = [math.fsum(row) / (vm.trials * d) for row, d in zip(errs, denom)]
    rel = (errs / denom[:, None]).ravel()
    return ErrorStats(
        sigma=max(eff.sigma_exponent, eff.sigma_mantissa),
        mode=mode,
        mean_rel_err=math.fsum(per_pair) / len(per_pair),
        p50=float(np.percentile(rel, 50)),
        p95=float(np.percentile(rel, 95)),
        trials=vm.trials,
        seed=vm.seed,
    )


def sweep(
    sigmas: Sequence[float],
    modes: Sequence[str],
    workload: Sequence[Pair],
    seed: int = 0,
    trials: int = 100,
    cfg: PipelineConfig = DEFAULT_CONFIG,
    analog: AnalogConfig | None = None,
    metric: str = "raw",
) -> list[ErrorStats]:
    """One :class:`ErrorStats` per (sigma, mode); the same seed is reused for every sigma."""
    if not sigmas:
        raise ValueError("sigma list is empty")
    out = []
    for s in sigmas:
        for mode in modes:
            stats = monte_carlo_error(workload, mode_model(s, mode, seed, trials), mode, cfg, analog, metric)
            out.append(ErrorStats(s, mode, stats.mean_rel_err, stats.p50, stats.p95, trials, seed))
    return out


def stats_to_csv(rows: Sequence[ErrorStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def stats_to_gnuplot(rows: Sequence[ErrorStats]) -> str:
    """Whitespace-separated blocks, one per mode, for ``plot ... index i``."""
    lines = []
    for mode in dict.fromkeys(r.mode for r in rows):
        lines.append(f"# mode {mode}")
        lines.append("# sigma mean_rel_err p50 p95")
        for r in rows:
            if r.mode == mode:
                lines.append(f"{r.sigma:g} {r.mean_rel_err:.10g} {r.p50:.10g} {r.p95:.10g}")
        lines.append("")
        lines.append("")
    return "\n".join(lines)
