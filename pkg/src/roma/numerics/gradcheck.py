"""Central finite-difference verification of taped gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from roma.errors import NumericError
from roma.numerics.tensor import ParamRegistry, Tape, Tensor, backward, no_tape

FULL_CHECK_LIMIT = 4096
SAMPLED_INDICES = 256


@dataclass
class ParamCheck:
    name: str
    checked: int
    max_rel: float
    mean_rel: float
    worst_index: int


@dataclass
class GradCheckReport:
    params: dict = field(default_factory=dict)

    @property
    def max_rel(self) -> float:
        return max((p.max_rel for p in self.params.values()), default=0.0)

    @property
    def mean_rel(self) -> float:
        vals = [p.mean_rel for p in self.params.values()]
        return float(np.mean(vals)) if vals else 0.0

    def failing(self, tol: float) -> list[str]:
        return [name for name, p in self.params.items() if p.max_rel >= tol]


def _scalar(f: Callable[[], Tensor]) -> float:
    with no_tape():
        v = f()
    val = v.item() if isinstance(v, Tensor) else float(v)
    if not np.isfinite(val):
        raise NumericError(f"finite_difference_check: objective is non-finite ({val})")
    return val


def _substitute(obj, dirty: dict):
    if isinstance(obj, Tensor):
        return dirty.get(id(obj), obj)
    if isinstance(obj, (list, tuple)):
        return type(obj)(_substitute(o, dirty) for o in obj)
    return obj


def _tensor_ids(obj, out: list) -> list:
    if isinstance(obj, Tensor):
        out.append(id(obj))
    elif isinstance(obj, (list, tuple)):
        for o in obj:
            _tensor_ids(o, out)
    elif isinstance(obj, dict):
        for o in obj.values():
            _tensor_ids(o, out)
    return out


class ReplayPlan:
    """Downstream node lists of a recorded tape, cached per perturbed tensor.

    Intermediate results are dropped right after their last consumer runs,
    which keeps the working set close to that of a plain forward pass.
    """

    def __init__(self, tape: Tape, root: Tensor):
        self.tape = tape
        self.root = root
        self._reads = [_tensor_ids(n.call, []) if n.call is not None else [id(t) for t in n.inputs]
                       for n in tape.nodes]
        self._plans: dict[int, tuple] = {}

    def _plan(self, key: int) -> tuple:
        plan = self._plans.get(key)
        if plan is not None:
            return plan
        dirty = {key}
        steps = []
        for i, node in enumerate(self.tape.nodes):
            if any(r in dirty for r in self._reads[i]):
                if node.call is None:
                    raise NumericError(f"replay: node {node.op!r} was not recorded with its call")
                dirty.add(id(node.output))
                steps.append(i)
        last_use: dict[int, int] = {}
        for pos, i in enumerate(steps):
            for r in self._reads[i]:
                if r in dirty:
                    last_use[r] = pos
        release = [[] for _ in steps]
        for r, pos in last_use.items():
            if r != key and r != id(self.root):
                release[pos].append(r)
        plan = (steps, release)
        self._plans[key] = plan
        return plan

    def __call__(self, overrides: dict[int, Tensor]) -> float:
        if len(overrides) != 1:
            return replay(self.tape, self.root, overrides)
        (key, value), = overrides.items()
        steps, release = self._plan(key)
        nodes = self.tape.nodes
        dirty = {key: value}
        with no_tape():
            for i, drop in zip(steps, release):
                node = nodes[i]
                fn, args, kwargs = node.call
                dirty[id(node.output)] = fn(*_substitute(args, dirty), **_substitute(kwargs, dirty))
                for r in drop:
                    del dirty[r]
        val = dirty.get(id(self.root), self.root).item()
        if not np.isfinite(val):
            raise NumericError(f"finite_difference_check: objective is non-finite ({val})")
        return val


def replay(tape: Tape, root: Tensor, overrides: dict[int, Tensor]) -> float:
    """Re-execute only the taped primitives downstream of ``overrides``.

    ``overrides`` maps ``id(tensor)`` to its replacement.  Clean nodes keep
    their recorded outputs, so the result equals a full re-evaluation as long
    as every parameter-dependent computation went through the tape.
    """
    dirty = dict(overrides)
    with no_tape():
        for node in tape.nodes:
            if not any(id(t) in dirty for t in node.inputs if isinstance(t, Tensor)):
                continue
            if node.call is None:
                raise NumericError(f"replay: node {node.op!r} was not recorded with its call")
            fn, args, kwargs = node.call
            dirty[id(node.output)] = fn(*_substitute(args, dirty), **_substitute(kwargs, dirty))
    out = dirty.get(id(root), root)
    val = out.item()
    if not np.isfinite(val):
        raise NumericError(f"finite_difference_check: objective is non-finite ({val})")
    return val


def _record(f: Callable[[], Tensor], params: ParamRegistry) -> tuple[Tape, Tensor]:
    params.zero_grad()
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.item()):
        raise NumericError("finite_difference_check: objective is non-finite")
    return tape, loss


def analytic_grads(f: Callable[[], Tensor], params: ParamRegistry) -> dict[str, np.ndarray]:
    tape, loss = _record(f, params)
    backward(loss, tape, params)
    grads = {name: p.grad.copy() for name, p in params.items()}
    params.zero_grad()
    return grads


def finite_difference_check(
    f: Callable[[], Tensor],
    params: ParamRegistry,
    h: float = 1e-5,
    *,
    analytic: Optional[dict[str, np.ndarray]] = None,
    floor: float = 1e-6,
    seed: int = 0,
    names: Optional[list[str]] = None,
    incremental: bool = False,
) -> GradCheckReport:
    """Compare taped gradients of ``f`` with ``(f(p+h) - f(p-h)) / 2h``.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``.
    Tensors above 4096 elements are checked on 256 indices drawn with a
    fixed seed.  ``analytic`` overrides the taped gradients (fault
    injection).

    With ``incremental=True`` each perturbed objective is obtained by
    replaying only the primitives downstream of the perturbed parameter; the
    first probe of every tensor is cross-checked against a full evaluation
    of ``f``.
    """
    plan = None
    if incremental:
        plan = ReplayPlan(*_record(f, params))
        params.zero_grad()
    if analytic is None:
        analytic = analytic_grads(f, params)
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in params.items():
        if names is not None and name not in names:
            continue
        flat = p.data.reshape(-1)
        if flat.size > FULL_CHECK_LIMIT:
            idx = np.sort(rng.choice(flat.size, size=SAMPLED_INDICES, replace=False))
        else:
            idx = np.arange(flat.size)
        a_flat = analytic[name].reshape(-1)
        original = p.data
        rels = np.empty(len(idx))
        work = original.copy()
        wflat = work.reshape(-1)
        probe = Tensor(work)
        try:
            p.data = work
            for j, i in enumerate(idx):
                wflat[i] = flat[i] + h
                if incremental:
                    fp = plan({id(p): probe})
                    if j == 0 and fp != _scalar(f):
                        raise NumericError(f"replay of {name!r} disagrees with a full evaluation")
                else:
                    fp = _scalar(f)
                wflat[i] = flat[i] - h
                fm = plan({id(p): probe}) if incremental else _scalar(f)
                wflat[i] = flat[i]
                num = (fp - fm) / (2.0 * h)
                a = a_flat[i]
                rels[j] = abs(a - num) / max(abs(a), abs(num), floor)
        finally:
            p.data = original
        worst = int(np.argmax(rels)) if len(rels) else 0
        report.params[name] = ParamCheck(
            name=name,
            checked=len(idx),
            max_rel=float(rels.max()) if len(rels) else 0.0,
            mean_rel=float(rels.mean()) if len(rels) else 0.0,
            worst_index=int(idx[worst]) if len(idx) else -1,
        )
    return report
