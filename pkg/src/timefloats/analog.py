"""Physical mappings for the two analog steps and the Gaussian variability model.

Exponent path: each 4-bit exponent code selects a resistance; input and weight
resistances sit in series, a node precharged to ``v_dd`` discharges through
them and a clocked comparator turns the crossing time into a pulse. The pulse
width is affine in the exponent sum.

Mantissa path: the scaled input mantissa sets a pulse width ``T = code * t_lsb``,
the stored weight mantissa code sets a conductance, and the column integrator
accumulates ``sum(T_i * g_i)``.

All quantities are SI (ohm, farad, second, siemens, coulomb-per-volt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fp8 import EXP_MAX, HIDDEN, MAN_MAX


@dataclass(frozen=True)
class AnalogConfig:
    t_lsb: float = 1e-9  # code 15 -> 15 ns
    r_min: float = 0.1e6
    r_max: float = 1.0e6
    c_int: float = 10e-15
    v_dd: float = 1.0
    comparator_threshold: float = 0.5
    # mantissa weights map affinely onto conductance (G proportional to code
    # up to an offset); False maps affinely onto resistance instead
    linear_conductance: bool = True

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be below r_max")
        if self.t_lsb <= 0:
            raise ValueError("t_lsb must be positive")
        if not 0 < self.comparator_threshold < 1:
            raise ValueError("comparator_threshold must lie in (0, 1)")
        if self.c_int <= 0 or self.v_dd <= 0:
            raise ValueError("c_int and v_dd must be positive")

    @property
    def g_min(self) -> float:
        return 1.0 / self.r_max

    @property
    def g_max(self) -> float:
        return 1.0 / self.r_min

    @property
    def r_step(self) -> float:
        """Resistance per exponent code unit."""
        return (self.r_max - self.r_min) / EXP_MAX

    @property
    def g_step(self) -> float:
        """Conductance per mantissa code unit (linear_conductance mode)."""
        return (self.g_max - self.g_min) / MAN_MAX

    @property
    def discharge_factor(self) -> float:
        """Seconds per ohm of the comparator crossing time."""
        return self.c_int * math.log(1.0 / self.comparator_threshold)


@dataclass(frozen=True)
class VariabilityModel:
    """Multiplicative Gaussian process variability, ``C -> C * (1 + N(0, sigma))``.

    ``sigma_exponent`` acts on the per-element discharge times of the exponent
    adder, ``sigma_mantissa`` on the per-element charge contributions of the
    crossbar. ``trials`` is the Monte Carlo count per workload pair.
    """

    sigma_exponent: float = 0.0
    sigma_mantissa: float = 0.0
    seed: int = 0
    trials: int = 100

    def __post_init__(self):
        if self.sigma_exponent < 0 or self.sigma_mantissa < 0:
            raise ValueError("sigma must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @property
    def is_ideal(self) -> bool:
        return self.sigma_exponent == 0 and self.sigma_mantissa == 0


def perturb(c: float, sigma: float, rng: np.random.Generator) -> float:
    """Return ``c * (1 + sigma * z)`` with ``z`` drawn from ``rng``.

    No draw is consumed when ``sigma`` is zero, so ``c`` comes back bit-exact.
    """
    if sigma == 0:
        return c
    return c * (1.0 + sigma * rng.standard_normal())


def code_to_resistance(code, cfg: AnalogConfig, code_max: int = EXP_MAX) -> float:
    """Affine map code 0 -> r_min, code_max -> r_max."""
    if not 0 <= code <= code_max:
        raise ValueError(f"code {code} outside 0..{code_max}")
    return cfg.r_min + (cfg.r_max - cfg.r_min) * code / code_max


def code_to_conductance(code, cfg: AnalogConfig) -> float:
    """Conductance programmed for a stored 4-bit mantissa code."""
    if not 0 <= code <= MAN_MAX:
        raise ValueError(f"code {code} outside 0..{MAN_MAX}")
    if cfg.linear_conductance:
        return cfg.g_min + cfg.g_step * code
    return 1.0 / code_to_resistance(code, cfg, MAN_MAX)


def rc_discharge_time(r_total: float, cfg: AnalogConfig) -> float:
    """Instant at which ``v_dd * exp(-t / RC)`` crosses the comparator threshold."""
    if r_total <= 0:
        raise ValueError("r_total must be positive")
    return r_total * cfg.discharge_factor


def exponent_sum_time(x_exp, w_exp, cfg: AnalogConfig):
    """Discharge time through the series input and weight exponent resistors.

    Works elementwise on numpy arrays as well as on scalars.
    """
    r_total = 2 * cfg.r_min + cfg.r_step * (np.asarray(x_exp) + np.asarray(w_exp))
    return r_total * cfg.discharge_factor


def time_to_exponent_sum(t, cfg: AnalogConfig):
    """Inverse of :func:`exponent_sum_time`, real valued (not yet quantized)."""
    return (np.asarray(t) / cfg.discharge_factor - 2 * cfg.r_min) / cfg.r_step


def quantize_exponent_sum(t, cfg: AnalogConfig) -> np.ndarray:
    """Clocked-comparator readout: nearest integer sum, clipped to the 5-bit range."""
    return np.clip(np.rint(time_to_exponent_sum(t, cfg)), 0, 2 * EXP_MAX).astype(np.int64)


def pulse_and_integrate(
    scaled: Sequence[int],
    w_man: Sequence[int],
    cfg: AnalogConfig,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    noise: Sequence[float] | None = None,
) -> float:
    """Integrated charge (per unit capacitance) of one column lane.

    Each contribution ``T_i * g_i`` is perturbed independently. ``noise``
    supplies the standard-normal draws explicitly; otherwise they come from
    ``rng`` one per element, in order.
    """
    if len(scaled) != len(w_man):
        raise ValueError(f"length mismatch: {len(scaled)} vs {len(w_man)}")
    if sigma > 0 and noise is None:
        if rng is None:
            raise ValueError("sigma > 0 needs an rng or explicit noise")
        noise = rng.standard_normal(len(scaled))
    charge = 0.0
    for i, (s, c) in enumerate(zip(scaled, w_man)):
        q = (s * cfg.t_lsb) * code_to_conductance(c, cfg)
        if sigma > 0:
            q *= 1.0 + sigma * noise[i]
        charge += q
    return charge


def demap_charge(charge, scaled_total, cfg: AnalogConfig, hidden_bit: bool = True):
    """Recover the integer-scale product sum from an integrated charge.

    ``scaled_total`` is the digital sum of the lane's scaled input mantissas;
    it cancels the ``g_min`` offset of the conductance map. In hidden-bit mode
    the implicit leading one of every weight contributes ``16 * scaled_total``,
    added digitally.
    """
    if not cfg.linear_conductance:
        raise ValueError("charge de-mapping needs linear_conductance=True")
    code_part = (np.asarray(charge) / cfg.t_lsb - cfg.g_min * np.asarray(scaled_total)) / cfg.g_step
    if hidden_bit:
        return code_part + HIDDEN * np.asarray(scaled_total)
    return code_part
