"""Open-set recalibration baseline: class mean vectors plus Weibull tail fits.

Per class, the mean activation vector (MAV) of correctly classified training
instances is computed over the penultimate-layer activations, and a
two-parameter Weibull is fit by maximum likelihood to the largest distances
between those instances and the MAV. Scoring dampens the top-ranked class
activations by the Weibull tail probability of their distance to each MAV
and diverts the removed mass into an explicit unknown class.

Model files are JSON: one entry per class with keys mav, kappa, lambda,
tau, eta.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ClassModel",
    "DegenerateTailError",
    "OpenMaxScores",
    "WeibullFitError",
    "compute_mav",
    "fit_class_models",
    "load_models",
    "openmax_decide",
    "openmax_recalibrate",
    "save_models",
    "weibull_cdf",
    "weibull_fit_tail",
    "weibull_log_likelihood",
]


class DegenerateTailError(ValueError):
    """The distance tail has zero variance; no Weibull fit is possible."""


class WeibullFitError(RuntimeError):
    """Newton iteration on the shape equation failed; carries the iterate trace."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(f"{message}; iterates: {trace}")
        self.trace = trace


@dataclass(frozen=True)
class ClassModel:
    """Per-class MAV plus fitted tail distribution (shape, scale, shift)."""

    class_id: int
    mav: np.ndarray
    kappa: float
    lam: float
    tau: float
    tail_size: int

    def __post_init__(self):
        mav = np.ascontiguousarray(self.mav, dtype=np.float64)
        mav.flags.writeable = False
        object.__setattr__(self, "mav", mav)
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be finite and positive, got {self.kappa}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lambda must be finite and positive, got {self.lam}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class OpenMaxScores:
    """Probabilities over (unknown, class 0, ..., class J-1); sums to one."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def unknown_prob(self) -> float:
        return float(self.probs[0])

    @property
    def class_probs(self) -> np.ndarray:
        return self.probs[1:]


def compute_mav(activations) -> np.ndarray:
    """Elementwise mean of the given penultimate-layer activation vectors."""
    arr = np.asarray(activations, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a non-empty 2-D array of activation vectors")
    return arr.mean(axis=0)


def weibull_log_likelihood(x: np.ndarray, kappa: float, lam: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    return float(
        n * np.log(kappa)
        - n * kappa * np.log(lam)
        + (kappa - 1) * np.log(x).sum()
        - ((x / lam) ** kappa).sum()
    )


def weibull_fit_tail(
    distances, tail_size: int, tol: float = 1e-9, max_iter: int = 200
) -> tuple[float, float, float]:
    """Fit (kappa, lambda, tau) to the `tail_size` largest distances.

    tau is the smallest tail value; the fit maximizes the two-parameter
    Weibull likelihood of the shifted values via Newton iteration on the
    shape profile equation. The shifted minimum is exactly 0 and carries no
    usable likelihood, so the MLE runs on the strictly positive shifted
    values; an all-equal tail therefore raises DegenerateTailError.
    """
    d = np.asarray(distances, dtype=np.float64)
    if tail_size < 2:
        raise ValueError(f"tail_size must be >= 2, got {tail_size}")
    if d.ndim != 1 or d.size < tail_size:
        raise ValueError(f"need at least {tail_size} distances, got {d.size}")
    if not np.isfinite(d).all() or (d < 0).any():
        raise ValueError("distances must be finite and non-negative")

    tail = np.sort(d)[-tail_size:]
    tau = float(tail[0])
    x = tail - tau
    x = x[x > 0]
    if x.size == 0:
        raise DegenerateTailError("all tail values are equal; zero-variance tail")

    ln_x = np.log(x)
    mean_ln = ln_x.mean()
    spread = ln_x.std()
    k = 1.2 / spread if spread > 0 else 1.0

    trace = [float(k)]
    for _ in range(max_iter):
        # non-finite intermediates signal a failed fit, caught below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            xk = x**k
            sk = xk.sum()
            sk_ln = (xk * ln_x).sum()
            g = sk_ln / sk - 1.0 / k - mean_ln
            g_prime = (xk * ln_x**2).sum() / sk - (sk_ln / sk) ** 2 + 1.0 / k**2
            step = g / g_prime
            k_new = k - step
        if k_new <= 0:
            k_new = k / 2  # keep the iterate in the admissible region
        trace.append(float(k_new))
        if not np.isfinite(k_new):
            raise WeibullFitError("shape iteration produced a non-finite value", trace)
        if abs(k_new - k) <= tol * max(1.0, abs(k_new)):
            k = k_new
            break
        k = k_new
    else:
        raise WeibullFitError(
            f"shape iteration did not converge in {max_iter} steps", trace
        )

    lam = float(np.mean(x**k) ** (1.0 / k))
    return float(k), lam, tau


def weibull_cdf(distance: float, model: ClassModel) -> float:
    """Tail probability of a distance under the class's shifted Weibull."""
    shifted = distance - model.tau
    if shifted <= 0:
        return 0.0
    return float(1.0 - np.exp(-((shifted / model.lam) ** model.kappa)))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def openmax_recalibrate(
    v, models: Mapping[int, ClassModel], alpha: int
) -> OpenMaxScores:
    """Recalibrate an activation vector over J classes into open-set scores.

    The top-alpha classes by activation are dampened by their Weibull tail
    probability with rank weight (alpha - s + 1)/alpha, the removed mass
    becomes the unknown logit, and a softmax over (unknown, classes) yields
    the probabilities.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("activation vector must be 1-D")
    n_classes = v.shape[0]
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if alpha > n_classes:
        raise ValueError(f"alpha {alpha} exceeds number of classes {n_classes}")
    for j in range(n_classes):
        if j not in models:
            raise ValueError(f"missing class model for class {j}")

    ranked = np.argsort(-v, kind="stable")
    v_hat = v.copy()
    unknown = 0.0
    for s in range(1, alpha + 1):
        j = int(ranked[s - 1])
        model = models[j]
        dist = float(np.linalg.norm(v - model.mav))
        omega = 1.0 - ((alpha - s + 1) / alpha) * weibull_cdf(dist, model)
        v_hat[j] = v[j] * omega
        unknown += v[j] * (1.0 - omega)

    logits = np.concatenate(([unknown], v_hat))
    return OpenMaxScores(_softmax(logits))


def openmax_decide(scores: OpenMaxScores, threshold: float | None = None) -> int | None:
    """Argmax decision; None means unknown.

    Ties break toward the lowest index (the unknown slot precedes class 0).
    With a threshold set, the verdict is also unknown whenever the best
    known-class probability falls below it.
    """
    idx = int(np.argmax(scores.probs))
    if idx == 0:
        return None
    if threshold is not None and float(scores.class_probs.max()) < threshold:
        return None
    return idx - 1


def fit_class_models(
    activations_by_class: Mapping[int, np.ndarray], tail_size: int
) -> dict[int, ClassModel]:
    """Fit a ClassModel per class from its training activation vectors."""
    models: dict[int, ClassModel] = {}
    for j, acts in activations_by_class.items():
        acts = np.asarray(acts, dtype=np.float64)
        mav = compute_mav(acts)
        dists = np.linalg.norm(acts - mav, axis=1)
        kappa, lam, tau = weibull_fit_tail(dists, tail_size)
        models[j] = ClassModel(j, mav, kappa, lam, tau, tail_size)
    return models


def save_models(models: Mapping[int, ClassModel], path, class_names: Sequence[str] | None = None) -> None:
    doc = {
        "class_names": list(class_names) if class_names is not None else None,
        "classes": [
            {
                "class_id": m.class_id,
                "mav": m.mav.tolist(),
                "kappa": m.kappa,
                "lambda": m.lam,
                "tau": m.tau,
                "eta": m.tail_size,
            }
            for _, m in sorted(models.items())
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_models(path) -> tuple[dict[int, ClassModel], list[str] | None]:
    doc = json.loads(Path(path).read_text())
    models = {
        int(e["class_id"]): ClassModel(
            int(e["class_id"]),
            np.asarray(e["mav"], dtype=np.float64),
            float(e["kappa"]),
            float(e["lambda"]),
            float(e["tau"]),
            int(e["eta"]),
        )
        for e in doc["classes"]
    }
    return models, doc.get("class_names")
