"""Linear classifier trained on the Lagrangian of a relaxed, two-sided
fairness constraint.

The model minimizes hinge loss plus ``lam_plus * (rb - slack) +
lam_minus * (-rb - slack)``, where ``rb`` is the bias computed on a clamped
linear surrogate of the hard predictions. Parameters take minibatch
(sub)gradient steps, optionally scaled by Adam; multipliers take one
projected ascent step per epoch on the full-batch constraint values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from slack_audit.data import GROUPS, Dataset
from slack_audit.errors import DivergenceError, SchemaError, UndefinedRateError
from slack_audit.metrics import DEMPAR, BiasNotion


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True).ravel()
        if not (np.all(np.isfinite(w)) and math.isfinite(self.offset)):
            raise DivergenceError("linear model has non-finite parameters")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def zeros(cls, dim: int) -> "LinearModel":
        return cls(np.zeros(dim), 0.0)

    def decision(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.offset

    def hard(self, features) -> np.ndarray:
        # ties (z == 0) are positive
        return (self.decision(features) >= 0).astype(np.float64)

    def soft(self, features, margin: float = 1.0) -> np.ndarray:
        return soft_rate_surrogate(self.decision(features), margin)

    def params(self) -> np.ndarray:
        return np.append(self.weights, self.offset)

    @classmethod
    def from_params(cls, theta) -> "LinearModel":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], float(theta[-1]))

    def dumps(self, config: "TrainConfig | None" = None) -> str:
        lines = ["linear-model 1",
                 "weights " + " ".join(f"{v:.17g}" for v in self.weights),
                 f"offset {self.offset:.17g}"]
        if config is not None:
            lines.append("config " + " ".join(f"{k}={v}" for k, v in asdict(config).items()))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path, config: "TrainConfig | None" = None) -> None:
        Path(path).write_text(self.dumps(config), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "LinearModel":
        rows = {ln.split()[0]: ln.split()[1:] for ln in text.splitlines() if ln.strip()}
        if rows.get("linear-model") != ["1"]:
            raise SchemaError("not a linear-model v1 document")
        return cls(np.array([float(v) for v in rows["weights"]]), float(rows["offset"][0]))


@dataclass(frozen=True)
class TrainConfig:
    """Defaults follow Adam's usual settings with minibatches of 100 for 20
    epochs."""

    epochs: int = 20
    minibatch: int = 100
    lr_model: float = 0.001
    lr_multiplier: float = 0.5
    margin: float = 1.0
    adam: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "minibatch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lr_model", "lr_multiplier", "margin", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decays must lie in [0, 1)")

    @classmethod
    def from_strings(cls, kv: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in kv.items():
            if k not in types:
                raise ValueError(f"unknown training option {k!r}")
            t = types[k]
            if t in ("bool", bool):
                out[k] = str(v).lower() in ("1", "true", "yes", "on")
            elif t in ("int", int):
                out[k] = int(v)
            else:
                out[k] = float(v)
        return cls(**out)


def soft_rate_surrogate(z, m: float = 1.0):
    """clamp(0.5 + z / (2m), 0, 1): a ramp standing in for 1[z >= 0]."""
    if not m > 0:
        raise ValueError(f"surrogate margin must be > 0, got {m}")
    return np.clip(0.5 + np.asarray(z, dtype=np.float64) / (2.0 * m), 0.0, 1.0)


def _term_masks(dataset: Dataset, notion: BiasNotion, idx=None):
    g, y = dataset.groups, dataset.labels
    if idx is not None:
        g, y = g[idx], y[idx]
    masks = []
    for gid in GROUPS:
        m = g == gid
        if notion is not DEMPAR:
            m = m & (y == 1)
        masks.append(m)
    return masks


def relaxed_bias(model: LinearModel, dataset: Dataset, notion: BiasNotion | str, m: float = 1.0) -> float:
    notion = BiasNotion.parse(notion)
    s = model.soft(dataset.features, m)
    m1, m2 = _term_masks(dataset, notion)
    if not (m1.any() and m2.any()):
        raise UndefinedRateError("a group has no records for this bias notion")
    return float(s[m1].mean() - s[m2].mean())


def multiplier_step(lam: float, g_value: float, rate: float) -> float:
    """Projected gradient ascent on a non-negative multiplier."""
    if lam < 0:
        raise ValueError(f"multiplier must be >= 0, got {lam}")
    return max(0.0, lam + rate * g_value)


def hinge_loss(model: LinearModel, dataset: Dataset) -> float:
    s = 2.0 * dataset.labels - 1.0
    return float(np.mean(np.maximum(0.0, 1.0 - s * model.decision(dataset.features))))


def lagrangian_value(model: LinearModel, dataset: Dataset, notion: BiasNotion | str, slack: float,
                     lam_plus: float, lam_minus: float, m: float = 1.0) -> float:
    rb = relaxed_bias(model, dataset, notion, m)
    return hinge_loss(model, dataset) + lam_plus * (rb - slack) + lam_minus * (-rb - slack)


def lagrangian_grad(model: LinearModel, dataset: Dataset, notion: BiasNotion | str,
                    lam_plus: float, lam_minus: float, m: float = 1.0, idx=None) -> np.ndarray:
    """Subgradient of the Lagrangian in ``(weights, offset)`` over the rows
    ``idx`` (all rows when None). A group term with no rows in ``idx``
    contributes nothing."""
    notion = BiasNotion.parse(notion)
    x = dataset.features if idx is None else dataset.features[idx]
    y = dataset.labels if idx is None else dataset.labels[idx]
    xa = np.hstack([x, np.ones((len(x), 1))])
    z = xa[:, :-1] @ model.weights + model.offset
    s = 2.0 * y - 1.0
    active = (1.0 - s * z) > 0
    grad = -(xa * (s * active)[:, None]).sum(axis=0) / len(x)

    lam = lam_plus - lam_minus
    if lam != 0.0:
        ramp = (np.abs(z) < m) / (2.0 * m)
        for sign, mask in zip((1.0, -1.0), _term_masks(dataset, notion, idx)):
            if mask.any():
                grad += sign * lam * (xa[mask] * ramp[mask][:, None]).mean(axis=0)
    return grad


@dataclass
class LagrangianState:
    model: LinearModel
    lam_plus: float = 0.0
    lam_minus: float = 0.0
    steps: int = 0
    epochs: int = 0
    multiplier_history: list = field(default_factory=list)


def fit_lagrangian(dataset: Dataset, notion: BiasNotion | str, slack: float | None,
                   config: TrainConfig | None = None) -> LagrangianState:
    """Joint descent/ascent. ``slack=None`` trains without the constraint."""
    config = config or TrainConfig()
    notion = BiasNotion.parse(notion)
    if slack is not None and slack < 0:
        raise ValueError(f"slack must be >= 0, got {slack}")
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    theta = np.zeros(dataset.dim + 1)
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    state = LagrangianState(LinearModel.from_params(theta))
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = perm[start:start + config.minibatch]
            g = lagrangian_grad(state.model, dataset, notion, state.lam_plus, state.lam_minus,
                                config.margin, idx)
            state.steps += 1
            # overflow shows up as non-finite parameters, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                if config.adam:
                    mom = config.beta1 * mom + (1 - config.beta1) * g
                    vel = config.beta2 * vel + (1 - config.beta2) * g * g
                    mhat = mom / (1 - config.beta1 ** state.steps)
                    vhat = vel / (1 - config.beta2 ** state.steps)
                    theta = theta - config.lr_model * mhat / (np.sqrt(vhat) + config.eps)
                else:
                    theta = theta - config.lr_model * g
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}, step {state.steps}")
            state.model = LinearModel.from_params(theta)
        if slack is not None:
            rb = relaxed_bias(state.model, dataset, notion, config.margin)
            state.lam_plus = multiplier_step(state.lam_plus, rb - slack, config.lr_multiplier)
            state.lam_minus = multiplier_step(state.lam_minus, -rb - slack, config.lr_multiplier)
        loss = hinge_loss(state.model, dataset)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, step {state.steps}")
        state.epochs = epoch + 1
        state.multiplier_history.append((state.lam_plus, state.lam_minus))
    return state


def train_lagrangian(dataset: Dataset, notion: BiasNotion | str, slack: float,
                     config: TrainConfig | None = None) -> LinearModel:
    return fit_lagrangian(dataset, notion, slack, config).model


def train_unconstrained(dataset: Dataset, config: TrainConfig | None = None) -> LinearModel:
    return fit_lagrangian(dataset, DEMPAR, None, config).model


def group_prediction_summary(model: LinearModel, dataset: Dataset, m: float = 1.0) -> dict:
    """``{group: (mean soft surrogate, mean hard prediction)}``."""
    soft = model.soft(dataset.features, m)
    hard = model.hard(dataset.features)
    out = {}
    for g in GROUPS:
        mask = dataset.mask(g)
        out[g] = (float(soft[mask].mean()), float(hard[mask].mean()))
    return out
