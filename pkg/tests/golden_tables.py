"""Published bound/target tables, hard-coded for golden comparisons."""

import numpy as np

ETCH_CAL = [2500.0, 125.0, 400.0, 200.0, 0.0, 200.0]

# Etch input search ranges (unconstrained column): name, unit, lo, hi.
ETCH_INPUTS = [
    ("Pressure", "mT", 5, 120),
    ("Power 1", "W", 0, 29000),
    ("Power 2", "W", 0, 10000),
    ("Ar Flow", "sccm", 0, 1000),
    ("C4F8 Flow", "sccm", 0, 100),
    ("C4F6 Flow", "sccm", 0, 100),
    ("CH4 Flow", "sccm", 0, 20),
    ("O2 Flow", "sccm", 0, 50),
    ("Pulse Duty Cycle", "%", 10, 100),
    ("Pulse Frequency", "Hz", 500, 2000),
    ("Temperature", "degC", -15, 80),
]

# Etch output target bands: (name, meets, close) with None = open upper end.
ETCH_RULES = [
    ("Etch depth", (2250, 2750), (2000, 3000)),
    ("Etch rate", (100, None), (70, None)),
    ("Mask remaining", (350, None), (300, None)),
    ("Top CD", (190, 210), (160, 240)),
    ("Delta CD", (-15, 15), (-60, 60)),
    ("Bow CD", (190, 210), (160, 240)),
]

CVD_INPUTS = [
    ("SiH4 flow rate", 50, 500),
    ("NH3 flow rate", 100, 1000),
    ("N2 flow rate", 200, 2000),
    ("Chamber temperature", 300, 750),
    ("Chamber pressure", 1, 10),
    ("Chamber humidity", 5, 40),
    ("Electrode distance", 10, 30),
    ("Pre-clean plasma power", 0, 300),
    ("Pre-clean duration", 0, 60),
    ("Wafer rotation speed", 0, 3000),
    ("Process time", 5.05, 300),
]

CVD_TARGETS = [
    ("Film thickness (center)", 100, 2000),
    ("Film thickness (edge)", 100, 2200),
    ("Internal stress", -500, 500),
    ("Surface roughness (Ra)", 0.1, 10),
]

BOND_INPUTS = [
    ("Bonding pressure", 20, 120),
    ("Bonding time", 1, 30),
    ("Temperature", 100, 300),
    ("Wire diameter", 15, 33),
    ("Wire length", 0.5, 5.0),
    ("Pad diameter", 50, 150),
]

BOND_TARGETS = [
    ("Pull strength", 5, 25),
    ("Bonding x-offset", -20, 20),
    ("Bonding y-offset", -20, 20),
]


def verify_spec_tables(load_spec) -> list[str]:
    """Diff every bundled spec against the tables; returns mismatch messages."""
    problems = []

    etch = load_spec("etch")
    if etch.input_dim != 11 or etch.output_dim != 6:
        problems.append("etch dimensions")
    for var, (name, unit, lo, hi) in zip(etch.inputs, ETCH_INPUTS):
        if (var.name, var.unit, var.lo, var.hi) != (name, unit, lo, hi):
            problems.append(f"etch input {name}")
    for var, (name, meets, close) in zip(etch.outputs, ETCH_RULES):
        rule = var.rule
        ok = var.name == name and rule.meets_lo == meets[0]
        ok &= np.isinf(rule.meets_hi) if meets[1] is None else rule.meets_hi == meets[1]
        ok &= rule.close_lo == close[0]
        ok &= np.isinf(rule.close_hi) if close[1] is None else rule.close_hi == close[1]
        if not ok:
            problems.append(f"etch rule {name}")

    cvd = load_spec("cvd")
    if cvd.input_dim != 11 or cvd.output_dim != 4:
        problems.append("cvd dimensions")
    for var, (name, lo, hi) in zip(cvd.inputs, CVD_INPUTS):
        if (var.name, var.lo, var.hi) != (name, lo, hi):
            problems.append(f"cvd input {name}")
    for var, (name, lo, hi) in zip(cvd.outputs, CVD_TARGETS):
        if (var.name, var.rule.meets_lo, var.rule.meets_hi) != (name, lo, hi) or var.rule.has_close:
            problems.append(f"cvd target {name}")

    bond = load_spec("wire_bonding")
    if bond.input_dim != 6 or bond.output_dim != 3:
        problems.append("bonding dimensions")
    for var, (name, lo, hi) in zip(bond.inputs, BOND_INPUTS):
        if (var.name, var.lo, var.hi) != (name, lo, hi):
            problems.append(f"bonding input {name}")
    for var, (name, lo, hi) in zip(bond.outputs, BOND_TARGETS):
        if (var.name, var.rule.meets_lo, var.rule.meets_hi) != (name, lo, hi) or var.rule.has_close:
            problems.append(f"bonding target {name}")

    return problems
