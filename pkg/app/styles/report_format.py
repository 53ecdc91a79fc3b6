"""Cell formats for the lag-effect report tables: ``0.04 (0.01, 0.09)`` and ``P .02``."""

import math

import numpy as np

MISSING = "NA"


def format_number(value: float) -> str:
    """One decimal at magnitude >= 1, otherwise one significant digit."""
    if not math.isfinite(value):
        return MISSING
    if value == 0.0:
        return "0"
    if abs(value) >= 1.0:
        return f"{value:.1f}"
    text = np.format_float_positional(value, precision=1, unique=False, fractional=False, trim="-")
    # 0.96 rounds up to a whole number and takes the >= 1 format
    if abs(float(text)) >= 1.0:
        return f"{value:.1f}"
    return text


def format_estimate(estimate: float, ci_low: float, ci_high: float) -> str:
    return f"{format_number(estimate)} ({format_number(ci_low)}, {format_number(ci_high)})"


def format_p_value(p_value: float) -> str:
    """Journal style without the leading zero: ``.02``, ``.004``, ``<.001``, ``>.99``."""
    if not math.isfinite(p_value):
        return MISSING
    if p_value < 0.001:
        return "<.001"
    if p_value > 0.995:
        return ">.99"
    text = f"{p_value:.3f}" if p_value < 0.01 else f"{p_value:.2f}"
    return text.removeprefix("0")
