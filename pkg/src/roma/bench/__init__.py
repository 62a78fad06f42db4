"""Sequence-length scaling of the state-space encoder against full attention."""
from roma.bench.sweep import (
    DEFAULT_LENGTHS, KINDS, BenchConfig, Encoder, ScalingFit, SweepPoint, emit_report, fit_all,
    fit_scaling_exponent, peak_alloc, sweep, time_encoder,
)
