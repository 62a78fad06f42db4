"""Check that predictions never read the token they are about to predict."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from roma.model.network import RoMANetwork, cluster_members
from roma.numerics import no_tape


@dataclass
class CausalityReport:
    trials: int
    violations: int
    max_violation: float
    # (trial, perturbed position, first offending prediction) per violation
    findings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def unmasked_copy(network: RoMANetwork) -> RoMANetwork:
    """Same parameters, decoder mask switched off; the audit must flag it."""
    twin = RoMANetwork(network.config, causal=False)
    twin.params = network.params
    return twin


def _predict(network: RoMANetwork, image: np.ndarray):
    with no_tape():
        out = network.forward(image[None])
    clusters = None if out.cluster_preds is None else out.cluster_preds.data[0]
    return out.token_preds.data[0], clusters


def causality_audit(network: RoMANetwork, images: np.ndarray, trials: int = 32, seed: int = 0) -> CausalityReport:
    """Replace a random patch ``j`` with noise and compare predictions.

    Token predictions for positions ``1..j`` must be bit-identical, as must
    every cluster prediction whose first token is at or before ``j`` (this
    includes all clusters lying wholly before ``j``).
    """
    cfg = network.config
    p, g = cfg.patch_size, cfg.grid_side
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    firsts = [min(m) for m in cluster_members(cfg)][1:]
    rng = np.random.default_rng(seed)
    report = CausalityReport(trials, 0, 0.0)
    for t in range(trials):
        img = images[t % len(images)]
        j = int(rng.integers(cfg.n_tokens))
        r, c = divmod(j, g)
        noisy = img.copy()
        noisy[r * p:(r + 1) * p, c * p:(c + 1) * p] = rng.random((p, p, img.shape[2]))
        tok0, clu0 = _predict(network, img)
        tok1, clu1 = _predict(network, noisy)
        diffs = [np.abs(tok1[:j] - tok0[:j]).max(initial=0.0)]
        if clu0 is not None:
            keep = [n for n, f in enumerate(firsts) if f <= j]
            diffs.append(np.abs(clu1[keep] - clu0[keep]).max(initial=0.0))
        worst = float(max(diffs))
        if worst > 0.0:
            report.violations += 1
            where = "token" if diffs[0] > 0 else "cluster"
            report.findings.append((t, j, where))
        report.max_violation = max(report.max_violation, worst)
    return report


def future_sensitivity(network: RoMANetwork, image: np.ndarray, seed: int = 0) -> float:
    """Largest change in the prediction for token ``j+1`` when patch ``j`` changes.

    A model that is not constant in its input should respond here; used to
    make sure the audit is not passing vacuously.
    """
    cfg = network.config
    p, g = cfg.patch_size, cfg.grid_side
    rng = np.random.default_rng(seed)
    j = int(rng.integers(cfg.n_tokens - 1))
    r, c = divmod(j, g)
    noisy = np.array(image, dtype=np.float64)
    noisy[r * p:(r + 1) * p, c * p:(c + 1) * p] = rng.random((p, p, noisy.shape[2]))
    tok0, _ = _predict(network, np.asarray(image, dtype=np.float64))
    tok1, _ = _predict(network, noisy)
    return float(np.abs(tok1[j] - tok0[j]).max())
