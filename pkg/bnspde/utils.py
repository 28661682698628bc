"""Logging, timing and text output helpers shared by the simulator modules."""

import cProfile
import json
import math
import sys
import timeit

import numpy as np
from sty import fg, rs
from tqdm import tqdm

from bnspde import config

log_output = ""


def log(s):
    global log_output
    log_output = log_output + s + "\n"
    if config.verbose:
        print(s)


def colored(text, color=fg.red):
    return color + str(text) + rs.all


def warn(s):
    global log_output
    log_output = log_output + "WARNING: " + s + "\n"
    print(colored(s, fg.yellow), file=sys.stderr)


def error(s):
    print(colored(s, fg.red), file=sys.stderr)


def progress_bar(iterable, desc=None, total=None):
    return tqdm(iterable, desc=desc, total=total, disable=not (config.progress and config.verbose))


class ScopedTimer:

    indent = -1

    enabled = True

    def __init__(self, name, active=True, detailed=False):
        self.name = name
        self.active = active and self.enabled and config.timers
        self.detailed = detailed

    def __enter__(self):
        if self.active:
            self.start = timeit.default_timer()
            ScopedTimer.indent += 1

            if self.detailed:
                self.cp = cProfile.Profile()
                self.cp.clear()
                self.cp.enable()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        if self.active:
            if self.detailed:
                self.cp.disable()
                self.cp.print_stats(sort='tottime')

            elapsed = (timeit.default_timer() - self.start) * 1000.0
            log("{}{} took {:.2f} ms".format("\t" * ScopedTimer.indent, self.name, elapsed))
            ScopedTimer.indent -= 1


def format_number(x):
    """17 significant digits, enough to round-trip any float64."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def ndjson_line(record):
    """Render a flat record as one JSON line with full-precision floats."""
    items = []
    for key, value in record.items():
        if value is None:
            text = "null"
        elif isinstance(value, str):
            text = json.dumps(value)
        elif isinstance(value, (list, tuple, np.ndarray)):
            text = "[" + ", ".join(format_number(v) for v in value) + "]"
        else:
            text = format_number(value)
        items.append(f"{json.dumps(str(key))}: {text}")
    return "{" + ", ".join(items) + "}"


def write_ndjson(filename, records):
    with open(filename, "w") as f:
        for record in records:
            f.write(ndjson_line(record) + "\n")


def fit_power_law(x, y):
    """Least-squares fit of log y = intercept + slope * log x.

    Returns (slope, intercept, r_squared). Points with non-positive y are
    dropped; fewer than two remaining points yield NaNs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if np.count_nonzero(keep) < 2:
        return math.nan, math.nan, math.nan
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = ly - (intercept + slope * lx)
    total = np.sum((ly - ly.mean())**2)
    r_squared = 1.0 - np.sum(residual**2) / total if total > 0 else 1.0
    return float(slope), float(intercept), float(r_squared)


def write_table(filename, frame, header=()):
    """CSV with 17 significant digits, preceded by ``header`` lines as # comments."""
    with open(filename, "w") as f:
        for line in header:
            f.write(f"# {line}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
