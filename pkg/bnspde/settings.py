"""Experiment settings: defaults, JSON loading and admissibility validation."""

import hashlib
import json
import math
from collections.abc import MutableMapping
from copy import deepcopy

from munch import munchify

# Each violation message quotes exactly one of these conditions.
ANCHORS = {
    "p": "p in [2, inf)",
    "alpha": "alpha in (1, 1 + 1/p)",
    "theta_B": "theta_B in [0, 1/2)",
    "theta_C": "theta_C in (1 - alpha/2, 1/2)",
    "theta_G": "theta_G in (1 - alpha/2, 1)",
    "a": "a = 0 (no extra spatial regularity of the state)",
    "delta": "delta + lambda < min{1 - theta_G, 1/2 - theta_B, 1/2 - theta_C}",
    "q": "q < dp/(d - 1)",
    "dirichlet": "why one cannot consider Dirichlet boundary conditions with the boundary-forcing construction",
    "trace_class": "sum_n lambda_n ||e_n||_inf^2 < inf",
    "rkhs": "q in (p, inf], s in [p, inf) with 1/p = 1/q + 1/s",
    "integrable": "theta_B in (d/(2r), 1/2) with r in (d, inf)",
    "white": "let d = 1 and p > 2 for white noise",
    "white_theta": "theta_B in (1/(2p) + 1/4, 1/2) for white noise",
    "grid": "dimension in {1, 2} and n_per_axis >= 4",
    "lattice": "T > 0 and M >= 2",
    "run": "paths, workers and batch_size are positive integers",
    "shift": "shift w >= 0",
    "noise": "noise kind, mode count and amplitude are admissible",
    "catalog": "name taken from the fixed catalog",
    "unknown": "every key must exist in the default settings",
    "type": "value has the type of its default",
}

default_settings = munchify({
    "name": "bnspde",
    "seed": 42,
    "paths": 16,
    "workers": 1,
    "batch_size": 16,
    "boundary_condition": "neumann",
    "shift_w": 1.0,
    # solve with A - w and F + w U instead of A and F
    "absorb_shift": False,
    "grid": {
        "dimension": 1,
        "n": 64,
    },
    "lattice": {
        "T": 1.0,
        "M": 256,
    },
    "coefficients": {
        # one of ("constant", "oscillating", "holder", "step")
        "type": "constant",
        "a": 1.0,
        "a0": 0.0,
        "amplitude": 0.0,
        "frequency": 1.0,
        "mu": 1.0,
        "t0": 0.5,
    },
    "exponents": {
        "p": 2.0,
        "alpha": 1.2,
        "theta_B": 0.0,
        "theta_C": 0.45,
        "theta_G": 0.5,
        "a": 0.0,
        "delta": 0.0,
        "q": 4.0,
        "check_embedding": True,
    },
    "noise": {
        "interior": {
            # one of ("none", "spectral", "white", "kernel")
            "kind": "none",
            # one of ("power", "single", "file")
            "spectrum": "power",
            "amplitude": 1.0,
            "decay": 2.0,
            "modes": 64,
            "length_scale": 0.2,
            "r": 2.0,
            "filename": "",
        },
        "boundary": {
            "kind": "none",
            "spectrum": "power",
            "amplitude": 1.0,
            "decay": 2.0,
            "modes": 64,
            "length_scale": 0.2,
            "s": 2.0,
            "filename": "",
        },
    },
    "regime": {
        # one of ("none", "trace_class", "rkhs", "integrable", "white")
        "name": "none",
        "q": "inf",
    },
    "nonlinearities": {
        "F": {"name": "zero", "params": []},
        "G": {"name": "zero", "params": []},
        "B": {"name": "zero", "params": []},
        "C": {"name": "zero", "params": []},
    },
    "initial": {
        # one of ("zero", "constant", "cos_mode", "random_smooth")
        "name": "zero",
        "value": 1.0,
        "mode": 1,
        "modes": 8,
    },
    "outputs": {
        "snapshots": [],
        "ndjson": True,
    },
    "study": {
        "levels": 3,
        "refinements": 2,
        "test_function": "eigenvector",
        "test_mode": 1,
        "statistic": "mean",
        "subtract_initial": True,
        "oracle_T": 0.1,
        "grid_sizes": [64, 128, 256],
        "step_counts": [256, 512, 1024],
    },
})


# Leaves that take a number or the string "inf".
EXPONENT_KEYS = ("exponents.p", "exponents.q", "regime.q", "noise.interior.r", "noise.boundary.s")

# Keys that change how a run is executed but not its results.
EXECUTION_KEYS = ("workers",)

REGIMES = ("none", "trace_class", "rkhs", "integrable", "white")


class ConfigError(ValueError):

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n\t" + "\n\t".join(self.violations))


def violation(anchor, message):
    return f"{message} [violates '{ANCHORS[anchor]}']"


def as_exponent(value):
    """Numbers in settings may be given as the string "inf"."""
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(value)


def rec_merge(d1, d2, path="", unknown=None):
    """
    Update two dicts of dicts recursively,
    if either mapping has leaves that are non-dicts,
    the second's leaf overwrites the first's.
    Keys of d2 missing in d1 are collected in ``unknown``.
    """
    d3 = deepcopy(dict(d1))
    for k, v in d2.items():
        if k not in d1:
            if unknown is not None:
                unknown.append(f"{path}{k}")
            continue
        if isinstance(d1[k], MutableMapping) and isinstance(v, MutableMapping):
            d3[k] = rec_merge(d1[k], v, f"{path}{k}.", unknown)
        else:
            d3[k] = deepcopy(v)
    return d3


def _is_exponent(value):
    if isinstance(value, bool):
        return False
    if isinstance(value, str):
        return value.strip().lower() in ("inf", "infinity")
    return isinstance(value, (int, float))


def _check_types(defaults, values, path, violations):
    for k, default in defaults.items():
        value = values[k]
        name = f"{path}{k}"
        if name in EXPONENT_KEYS:
            if not _is_exponent(value):
                violations.append(violation("type", f"{name} = {value!r} must be a number or \"inf\""))
        elif isinstance(default, MutableMapping):
            if not isinstance(value, MutableMapping):
                violations.append(violation("type", f"{name} must be a section"))
            else:
                _check_types(default, value, f"{name}.", violations)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                violations.append(violation("type", f"{name} = {value!r} must be a boolean"))
        elif isinstance(default, (int, float)):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                violations.append(violation("type", f"{name} = {value!r} must be a number"))
        elif isinstance(default, str):
            if not isinstance(value, str):
                violations.append(violation("type", f"{name} = {value!r} must be a string"))
        elif isinstance(default, list):
            if not isinstance(value, list):
                violations.append(violation("type", f"{name} = {value!r} must be a list"))


def exponent_cap(exponents):
    """min{1 - theta_G, 1/2 - theta_B, 1/2 - theta_C}."""
    return min(1.0 - exponents.theta_G, 0.5 - exponents.theta_B, 0.5 - exponents.theta_C)


def _validate(settings, violations):
    from bnspde.nonlinearity import CATALOG
    from bnspde.noise import validate_example

    s = settings
    if s.grid.dimension not in (1, 2) or s.grid.n < 4 or int(s.grid.n) != s.grid.n:
        violations.append(violation("grid", f"grid = ({s.grid.dimension}, {s.grid.n})"))
    if not s.lattice.T > 0 or s.lattice.M < 2 or int(s.lattice.M) != s.lattice.M:
        violations.append(violation("lattice", f"lattice = (T={s.lattice.T}, M={s.lattice.M})"))
    for key in ("paths", "workers", "batch_size"):
        if s[key] < 1 or int(s[key]) != s[key]:
            violations.append(violation("run", f"{key} = {s[key]}"))
    if s.shift_w < 0:
        violations.append(violation("shift", f"shift_w = {s.shift_w}"))
    if s.boundary_condition == "dirichlet":
        violations.append(violation("dirichlet", "boundary_condition = dirichlet is rejected"))
    elif s.boundary_condition != "neumann":
        violations.append(violation("catalog", f"boundary_condition = {s.boundary_condition!r}"))
    if s.coefficients.type not in ("constant", "oscillating", "holder", "step"):
        violations.append(violation("catalog", f"coefficients.type = {s.coefficients.type!r}"))

    e = s.exponents
    p = as_exponent(e.p)
    if not 2.0 <= p < math.inf:
        violations.append(violation("p", f"p = {e.p}"))
    elif not 1.0 < e.alpha < 1.0 + 1.0 / p:
        violations.append(violation("alpha", f"alpha = {e.alpha} with p = {p:g}"))
    if not 0.0 <= e.theta_B < 0.5:
        violations.append(violation("theta_B", f"theta_B = {e.theta_B}"))
    if not 1.0 - e.alpha / 2.0 < e.theta_C < 0.5:
        violations.append(violation("theta_C", f"theta_C = {e.theta_C} with alpha = {e.alpha}"))
    if not 1.0 - e.alpha / 2.0 < e.theta_G < 1.0:
        violations.append(violation("theta_G", f"theta_G = {e.theta_G} with alpha = {e.alpha}"))
    if e.a != 0.0:
        violations.append(violation("a", f"a = {e.a}"))
    if not 0.0 <= e.delta < exponent_cap(e):
        violations.append(violation("delta", f"delta = {e.delta} with cap {exponent_cap(e):g}"))
    d = s.grid.dimension
    if e.check_embedding and d >= 2 and not as_exponent(e.q) < d * p / (d - 1):
        violations.append(violation("q", f"q = {e.q} with d = {d}, p = {p:g}"))

    for target in ("interior", "boundary"):
        n = s.noise[target]
        if n.kind not in ("none", "spectral", "white", "kernel"):
            violations.append(violation("catalog", f"noise.{target}.kind = {n.kind!r}"))
        elif n.kind == "white" and (target != "interior" or d != 1 or not p > 2):
            violations.append(violation("white", f"white noise with target {target}, d = {d}, p = {p:g}"))
        if n.spectrum not in ("power", "single", "file"):
            violations.append(violation("catalog", f"noise.{target}.spectrum = {n.spectrum!r}"))
        if n.modes < 1 or n.amplitude < 0 or n.length_scale <= 0:
            violations.append(violation("noise", f"noise.{target} modes = {n.modes}, amplitude = {n.amplitude}"))

    for target, spec in s.nonlinearities.items():
        entry = CATALOG.get(spec.name)
        if entry is None:
            violations.append(violation("catalog", f"nonlinearities.{target}.name = {spec.name!r}"))
        elif len(spec.params) != entry.arity:
            violations.append(violation("catalog", f"nonlinearities.{target} = {spec.name} takes "
                                                   f"{entry.arity} parameters, got {len(spec.params)}"))
    if s.initial.name not in ("zero", "constant", "cos_mode", "random_smooth"):
        violations.append(violation("catalog", f"initial.name = {s.initial.name!r}"))
    if s.study.statistic not in ("mean", "sup"):
        violations.append(violation("catalog", f"study.statistic = {s.study.statistic!r}"))
    if s.study.test_function not in ("constant", "linear", "eigenvector"):
        violations.append(violation("catalog", f"study.test_function = {s.study.test_function!r}"))

    if s.regime.name not in REGIMES:
        violations.append(violation("catalog", f"regime.name = {s.regime.name!r}"))
    elif s.regime.name != "none" and not violations:
        report = validate_example(s)
        violations.extend(report.violations)


def parse_and_validate(text):
    """Parse JSON settings text, merge it over the defaults and validate.

    Raises ConfigError with one message per violation.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([violation("type", f"settings are not valid JSON: {e}")])
    if not isinstance(raw, MutableMapping):
        raise ConfigError([violation("type", "settings must be a JSON object")])
    unknown = []
    merged = rec_merge(default_settings, raw, unknown=unknown)
    violations = [violation("unknown", f"unknown key {k!r}") for k in unknown]
    _check_types(default_settings, merged, "", violations)
    settings = munchify(merged)
    if not violations:
        _validate(settings, violations)
    if violations:
        raise ConfigError(violations)
    return settings


def validate_settings(settings):
    return parse_and_validate(dump_settings(settings))


def load_settings(filename):
    """
    Loads settings from a JSON file.
    """
    if filename is None or len(filename) == 0:
        return deepcopy(default_settings)
    with open(filename, "r") as f:
        return parse_and_validate(f.read())


def dump_settings(settings):
    return json.dumps(settings, indent=4, sort_keys=True)


def save_settings(settings, filename, silence=False):
    with open(filename, "w") as f:
        f.write(dump_settings(settings))
    if not silence:
        print(f"Saved settings at {filename}.")


def fingerprint(settings):
    """SHA-256 of the canonical settings without the execution-only keys."""
    hashed = {k: v for k, v in settings.items() if k not in EXECUTION_KEYS}
    return hashlib.sha256(json.dumps(hashed, sort_keys=True).encode("utf-8")).hexdigest()


def override(settings, values=None, **kwargs):
    """Validated copy of the settings with values replaced.

    Keys of ``values`` may be dotted paths such as "grid.n"; None values are dropped.
    """
    result = munchify(json.loads(dump_settings(settings)))
    for key, value in {**(values or {}), **kwargs}.items():
        if value is None:
            continue
        *parents, leaf = key.split(".")
        section = result
        for name in parents:
            section = section[name]
        section[leaf] = value
    return validate_settings(result)
