"""Per-step energy accounting for one column scalar product.

Defaults are the 64-element breakdown of the reference design (15 nm). Other
vector lengths are extrapolated: element-proportional steps scale linearly,
the max-search tree scales with its node count, digitization is per column.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

REFERENCE_LENGTH = 64

STEPS = (
    # (id, field, description, hardware block)
    (1, "e_exponent_add", "Element-wise input-weight exponent addition", "Mixed-signal exponent adder"),
    (2, "e_max_search", "Searching largest added exponent", "D-F/F and MUX tree"),
    (3, "e_mantissa_scale", "Element-wise input mantissa scaling", "Time-domain subtraction and right shift"),
    (4, "e_crossbar_mac", "Scalar product of scaled mantissa vectors", "Memristor crossbar"),
    (5, "e_digitize", "Product-sum digitization and reformatting", "4-bit ADC"),
)

# short names accepted by --zero-all-but
STEP_ALIASES = {
    "exponent": "e_exponent_add",
    "max": "e_max_search",
    "scale": "e_mantissa_scale",
    "crossbar": "e_crossbar_mac",
    "adc": "e_digitize",
}


@dataclass(frozen=True)
class EnergyTable:
    """Energy per 64-element column operation, in joules."""

    e_exponent_add: float = 1.28e-12
    e_max_search: float = 3.25e-12
    e_mantissa_scale: float = 23e-15
    e_crossbar_mac: float = 1.23e-12
    e_digitize: float = 21e-15

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative")

    def scaled(self, k: float) -> "EnergyTable":
        return EnergyTable(**{n: v * k for n, v in asdict(self).items()})

    def only(self, step: str) -> "EnergyTable":
        """Copy with every entry zeroed except ``step`` (field name or alias)."""
        field = STEP_ALIASES.get(step, step)
        values = asdict(self)
        if field not in values:
            raise ValueError(f"unknown energy step {step!r}")
        return EnergyTable(**{n: (v if n == field else 0.0) for n, v in values.items()})


PRESETS = {
    "table1": EnergyTable(),
    # alternative crossbar and ADC energies for the same datapath
    "prose-variant": replace(EnergyTable(), e_crossbar_mac=1.32e-12, e_digitize=2.421e-12),
}


def get_preset(name: str) -> EnergyTable:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _tree_nodes(n: int) -> int:
    return (1 << math.ceil(math.log2(n))) - 1 if n > 1 else 0


def step_scale(step_id: int, n_elements: int) -> float:
    if n_elements == REFERENCE_LENGTH:
        return 1.0
    if step_id in (1, 3, 4):
        return n_elements / REFERENCE_LENGTH
    if step_id == 2:
        return _tree_nodes(n_elements) / _tree_nodes(REFERENCE_LENGTH)
    return 1.0


def step_energies(n_elements: int, table: EnergyTable) -> list[tuple[int, float]]:
    """(step id, joules) for each of the five steps."""
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    return [(sid, getattr(table, field) * step_scale(sid, n_elements)) for sid, field, _, _ in STEPS]


def mac_energy(n_elements: int, table: EnergyTable | None = None) -> float:
    """Joules for one scalar product of ``n_elements`` terms."""
    table = table or EnergyTable()
    total = 0.0
    for _, e in step_energies(n_elements, table):
        total += e
    return total


def efficiency_tops_per_watt(n_elements: int, table: EnergyTable | None = None) -> float:
    """Two ops (multiply + add) per element over the MAC energy, in TOPS/W."""
    return 2 * n_elements / mac_energy(n_elements, table) / 1e12


def is_extrapolated(n_elements: int) -> bool:
    return n_elements != REFERENCE_LENGTH


def energy_report(n_elements: int, table: EnergyTable) -> dict:
    steps = []
    for (sid, field, desc, block), (_, e) in zip(STEPS, step_energies(n_elements, table)):
        steps.append({"step": sid, "name": field, "description": desc, "module": block, "energy_J": e})
    return {
        "n_elements": n_elements,
        "extrapolated": is_extrapolated(n_elements),
        "steps": steps,
        "total_J": mac_energy(n_elements, table),
        "ops": 2 * n_elements,
        "tops_per_watt": efficiency_tops_per_watt(n_elements, table),
    }


def _fmt_joules(e: float) -> str:
    if e == 0:
        return "0 J"
    if abs(e) < 1e-12:
        return f"{e * 1e15:.3f} fJ"
    return f"{e * 1e12:.3f} pJ"


def format_report(report: dict) -> str:
    """Aligned text table, one row per step then the totals."""
    rows = [("#", "Step", "Module", "Energy")]
    for s in report["steps"]:
        rows.append((str(s["step"]), s["description"], s["module"], _fmt_joules(s["energy_J"])))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append("")
    lines.append(f"total energy : {report['total_J'] * 1e12:.3f} pJ  ({report['n_elements']} elements)")
    lines.append(f"efficiency   : {report['tops_per_watt']:.2f} TOPS/W  ({report['ops']} ops)")
    if report["extrapolated"]:
        lines.append(f"note         : extrapolated from the {REFERENCE_LENGTH}-element reference point")
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
