"""Frozen-feature probing, crop capture rates and the causality audit."""
from roma.eval.capture import (
    AresSelector, CaptureSample, FullImageSelector, RandomCropSelector, capture_rate, is_captured,
)
from roma.eval.causality import CausalityReport, causality_audit, future_sensitivity, unmasked_copy
from roma.eval.features import extract_features
from roma.eval.probe import LinearProbe, ProbeDataset, linear_probe
