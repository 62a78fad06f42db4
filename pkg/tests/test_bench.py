import importlib

import numpy as np
import pytest

from roma.bench import BenchConfig, Encoder, SweepPoint, emit_report, fit_all, fit_scaling_exponent, peak_alloc, sweep
from roma.errors import ContractError
from roma.numerics import Tensor, allocations, no_tape

sweep_mod = importlib.import_module("roma.bench.sweep")
SMALL = BenchConfig(width=8, depth=1, state_dim=4)
KS = (64, 128, 256, 512)


def power_points(kind, exponent, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for K in (256, 512, 1024, 2048, 4096):
        jitter = 1.0 + noise * rng.uniform(-1.0, 1.0) if noise else 1.0
        out.append(SweepPoint(kind, K, 3e-4 * K ** exponent * jitter, int(100 * K ** exponent)))
    return out


@pytest.mark.parametrize("exponent", [1.0, 2.0])
def test_exact_power_law_slopes(exponent):
    fit = fit_scaling_exponent(power_points("ssm", exponent))
    assert fit.slope == pytest.approx(exponent, abs=1e-9)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    mem = fit_scaling_exponent(power_points("ssm", exponent), "peak_bytes")
    assert mem.slope == pytest.approx(exponent, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_noisy_quadratic_slope(seed):
    fit = fit_scaling_exponent(power_points("attention", 2.0, noise=0.05, seed=seed))
    assert 1.85 <= fit.slope <= 2.15 and fit.r2 > 0.98


def test_fit_needs_four_distinct_lengths():
    pts = power_points("ssm", 1.0)
    with pytest.raises(ContractError):
        fit_scaling_exponent(pts[:3])
    with pytest.raises(ContractError):
        fit_scaling_exponent(pts[:3] + pts[:1])


def test_capped_points_are_left_out_of_the_fit():
    pts = power_points("attention", 2.0) + [SweepPoint("attention", 8192, float("inf"), 0, capped=True)]
    assert fit_scaling_exponent(pts).n_points == 5


def test_encoders_agree_on_shapes_and_time_grows():
    pts = sweep(("ssm", "attention"), (64, 512), SMALL, reps=3)
    for kind in ("ssm", "attention"):
        short, long = [p for p in pts if p.kind == kind]
        assert long.wall_ms > short.wall_ms
    x = Tensor(np.random.default_rng(0).normal(size=(1, 32, 8)))
    with no_tape():
        assert Encoder("ssm", SMALL)(x).shape == Encoder("attention", SMALL)(x).shape


def test_attention_memory_is_quadratic_and_ssm_linear():
    att = [peak_alloc("attention", SMALL, K) for K in (512, 1024)]
    ssm = [peak_alloc("ssm", SMALL, K) for K in (512, 1024)]
    assert att[1] >= 3 * att[0]
    assert ssm[1] <= 2.5 * ssm[0]
    assert allocations.live == 0 and allocations.peak == 0 and not allocations.enabled


def test_unknown_kind_and_short_sequence():
    with pytest.raises(ContractError):
        Encoder("rnn", SMALL)
    with pytest.raises(ContractError):
        peak_alloc("ssm", SMALL, 8)


def test_median_ignores_one_slow_rep(monkeypatch):
    # warmup is not timed; then five reps, the third ten times slower
    durations = iter([1.0, 1.0, 10.0, 1.0, 1.0])
    clock = {"t": 0.0, "start": True}

    def fake_counter():
        if clock["start"]:
            clock["start"] = False
            return clock["t"]
        clock["t"] += next(durations) / 1000.0
        clock["start"] = True
        return clock["t"]

    monkeypatch.setattr(sweep_mod.time, "perf_counter", fake_counter)
    point = sweep_mod.time_encoder("ssm", SMALL, 32, reps=5)
    assert point.wall_ms == pytest.approx(1.0)


def test_report_files(tmp_path):
    pts = power_points("ssm", 1.0) + power_points("attention", 2.0)
    fits = fit_all(pts)
    csv_a, md = emit_report(fits, pts, tmp_path / "a")
    csv_b, _ = emit_report(fits, pts, tmp_path / "b")
    assert csv_a.read_bytes() == csv_b.read_bytes()
    rows = csv_a.read_text().splitlines()
    assert rows[0] == "kind,K,wall_ms,peak_bytes" and len(rows) == 1 + 2 * 5
    text = md.read_text()
    for f in fits:
        assert f"{f.slope:.3f}" in text and f"{f.r2:.4f}" in text
