"""Fluorescence detection, Bayesian inference and logic readout protocols."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from ..errors import InputError
from .state import (
    DecayChannel,
    InternalLevelSet,
    JointState,
    Pulse,
    apply_pulse,
    cool_to_ground,
    measure_level,
    spontaneous_decay,
)


def poisson_pmf(count: int, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = count * np.log(lam) - lam - gammaln(count + 1.0)
    out = np.exp(logp)
    if count == 0:
        out = np.where(lam == 0, 1.0, out)
    return out


@dataclass(frozen=True)
class DetectionModel:
    """Poisson fluorescence model of the logic ion.

    Levels listed in ``bright_levels`` scatter with mean ``lambda_bright``
    counts per window, all others with ``lambda_dark``.
    """

    lambda_bright: float
    lambda_dark: float
    window: float = 200e-6  # s
    bright_levels: tuple[str, ...] = ("down",)

    def __post_init__(self):
        object.__setattr__(self, "bright_levels", tuple(self.bright_levels))
        if self.lambda_dark < 0 or self.lambda_bright < 0:
            raise InputError("mean counts must be non-negative")
        if not self.lambda_bright > self.lambda_dark:
            raise InputError("bright level must scatter more than the dark one")
        if not self.window > 0:
            raise InputError("detection window must be positive")

    @property
    def means(self) -> np.ndarray:
        """Mean counts for the (bright, dark) outcomes."""
        return np.array([self.lambda_bright, self.lambda_dark])

    def mean_for(self, level: str) -> float:
        return self.lambda_bright if level in self.bright_levels else self.lambda_dark

    def is_bright(self, count: int) -> bool:
        """Maximum-likelihood bright/dark decision for one count."""
        p = poisson_pmf(count, self.means)
        return bool(p[0] > p[1])

    def to_dict(self) -> dict:
        return {
            "lambda_bright": self.lambda_bright,
            "lambda_dark": self.lambda_dark,
            "window_s": self.window,
            "bright_levels": list(self.bright_levels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionModel":
        try:
            return cls(
                float(d["lambda_bright"]),
                float(d["lambda_dark"]),
                float(d.get("window_s", 200e-6)),
                tuple(d.get("bright_levels", ("down",))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid detection model: {exc}") from None


def detect(state: JointState, ion, model: DetectionModel, rng) -> tuple[int, JointState, str]:
    """Projective level measurement of ``ion`` followed by a Poisson count.

    Returns ``(count, collapsed state, observed level)``.
    """
    level, collapsed = measure_level(state, ion, rng)
    lam = model.mean_for(level)
    count = int(rng.poisson(lam)) if lam > 0 else 0
    return count, collapsed, level


def likelihoods(count: int, model: DetectionModel, response=None) -> np.ndarray:
    """P(count | candidate).

    ``response[i, o]`` is the probability that candidate ``i`` produces the
    bright (``o = 0``) or dark (``o = 1``) logic outcome; the default is the
    identity, i.e. candidates are the bright and dark outcomes themselves.
    """
    if count < 0 or int(count) != count:
        raise InputError("counts must be non-negative integers")
    outcome = poisson_pmf(int(count), model.means)
    r = np.eye(2) if response is None else np.asarray(response, dtype=float)
    return r @ outcome


def _normalize(post: np.ndarray) -> np.ndarray:
    total = post.sum()
    if not total > 0:
        raise InputError("all likelihoods vanish for this observation")
    return post / total


def bayes_update(prior, count: int, model: DetectionModel, response=None) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if abs(prior.sum() - 1.0) > 1e-9 or np.any(prior < 0):
        raise InputError("prior must be a probability vector")
    return _normalize(prior * likelihoods(count, model, response))


def bayes_update_batch(prior, counts: Sequence[int], model: DetectionModel, response=None) -> np.ndarray:
    """Posterior after all ``counts`` at once, via summed log-likelihoods."""
    prior = np.asarray(prior, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.log(prior)
        for c in counts:
            logp = logp + np.log(likelihoods(c, model, response))
    if np.all(np.isneginf(logp)):
        raise InputError("all likelihoods vanish for this observation")
    logp -= np.max(logp)
    return _normalize(np.exp(logp))


@dataclass
class ReadoutRecord:
    candidates: tuple[str, ...]
    true_state: str
    counts: list[int] = field(default_factory=list)
    posteriors: list[list[float]] = field(default_factory=list)
    spectroscopy_populations: list[dict] = field(default_factory=list)
    decision: str | None = None
    rounds: int = 0
    timed_out: bool = False

    @property
    def correct(self) -> bool:
        return self.decision == self.true_state

    def to_dict(self) -> dict:
        return {
            "candidates": list(self.candidates),
            "true_state": self.true_state,
            "counts": list(self.counts),
            "posteriors": [list(p) for p in self.posteriors],
            "decision": self.decision,
            "rounds": self.rounds,
            "timed_out": self.timed_out,
        }


# ---------------------------------------------------------------------------
# single-shot readout


SPEC_LEVELS = InternalLevelSet("Al", ("g", "e"))
LOGIC_LEVELS = InternalLevelSet("Be", ("down", "up"))


@dataclass(frozen=True)
class SchmidtResult:
    true_state: str
    inferred: str
    count: int
    logic_flip_probability: float  # dark population just before detection

    @property
    def correct(self) -> bool:
        return self.inferred == self.true_state

    def to_dict(self) -> dict:
        return {
            "true_state": self.true_state,
            "inferred": self.inferred,
            "count": self.count,
            "logic_flip_probability": self.logic_flip_probability,
        }


def _noisy(angle: float, rel_sigma: float, rng) -> float:
    if rel_sigma == 0:
        return angle
    return angle * (1.0 + rel_sigma * rng.standard_normal())


def run_schmidt_readout(
    true_state: str,
    rng,
    *,
    nbar_init: float = 0.0,
    angle_error: float = 0.0,
    model: DetectionModel | None = None,
    eta: tuple[float, float] = (0.1, 0.1),
    n_max: int = 10,
) -> SchmidtResult:
    """Map the spectroscopy ion's state onto the logic ion and detect it.

    Sequence: cool (thermal ``nbar_init``, logic ion reset to ``down``),
    red-sideband pi on the spectroscopy ion, red-sideband pi on the logic
    ion, fluorescence detection.  ``e`` maps onto the dark logic level.
    ``angle_error`` is the relative Gaussian spread of each pulse angle.
    """
    if true_state not in ("g", "e"):
        raise InputError("true state must be 'g' or 'e'")
    model = model or DetectionModel(10.0, 0.1)
    state = JointState.basis((SPEC_LEVELS, LOGIC_LEVELS), (true_state, "down"), 0, n_max)
    state = cool_to_ground(state, rng, nbar=nbar_init, logic_ion="Be", logic_level="down")
    state = apply_pulse(
        state, Pulse("red_sideband", ("Al",), _noisy(math.pi, angle_error, rng), (eta[0],), (("g", "e"),))
    )
    state = apply_pulse(
        state, Pulse("red_sideband", ("Be",), _noisy(math.pi, angle_error, rng), (eta[1],), (("down", "up"),))
    )
    p_flip = state.population("Be", "up")
    count, _, _ = detect(state, "Be", model, rng)
    inferred = "g" if model.is_bright(count) else "e"
    return SchmidtResult(true_state, inferred, count, p_flip)


# ---------------------------------------------------------------------------
# repeated QND readout


QND_CANDIDATES = ("S", "P0")


def qnd_levels(p1_lifetime: float, clock_lifetime: float) -> InternalLevelSet:
    return InternalLevelSet(
        "Al",
        ("S", "P1", "P0"),
        (DecayChannel("P1", "S", p1_lifetime), DecayChannel("P0", "S", clock_lifetime)),
    )


def qnd_response(mapping_fidelity: float) -> np.ndarray:
    """Rows S, P0; columns bright, dark.  S maps to dark, P0 to bright."""
    f = mapping_fidelity
    return np.array([[1.0 - f, f], [f, 1.0 - f]])


def run_qnd_readout(
    true_state: str,
    model: DetectionModel,
    p_des: float,
    max_rounds: int,
    mapping_fidelity: float,
    lifetime: float,
    round_duration: float,
    rng,
    *,
    p1_lifetime: float = 300e-6,
    decay: bool = True,
    eta: tuple[float, float] = (0.1, 0.1),
    n_max: int = 10,
) -> ReadoutRecord:
    """Repeated non-demolition readout with Bayesian stopping.

    Each round: cool the shared mode and reset the logic ion; blue sideband
    pi on S<->P1 of the spectroscopy ion; red sideband pi on the logic ion;
    with probability ``1 - mapping_fidelity`` the logic ion is flipped by a
    carrier pi pulse (mapping error); detect; update the posterior over
    {S, P0}; let P1 decay back to S; let P0 decay to S with probability
    ``1 - exp(-round_duration / lifetime)`` when ``decay`` is set.
    Stops once the largest posterior reaches ``p_des``.
    """
    if not 0.5 < p_des < 1.0:
        raise InputError("p_des must lie in (0.5, 1)")
    if true_state not in QND_CANDIDATES:
        raise InputError(f"true state must be one of {QND_CANDIDATES}")
    if not 0.0 <= mapping_fidelity <= 1.0:
        raise InputError("mapping fidelity must lie in [0, 1]")
    if max_rounds < 1:
        raise InputError("need at least one round")
    al = qnd_levels(p1_lifetime, lifetime)
    p1_channel = al.channel("P1", "S")
    clock_channel = al.channel("P0", "S")
    state = JointState.basis((al, LOGIC_LEVELS), (true_state, "down"), 0, n_max)
    map_al = Pulse("blue_sideband", ("Al",), math.pi, (eta[0],), (("S", "P1"),))
    map_be = Pulse("red_sideband", ("Be",), math.pi, (eta[1],), (("down", "up"),))
    flip = Pulse("carrier", ("Be",), math.pi, (), (("down", "up"),))
    response = qnd_response(mapping_fidelity)
    posterior = np.full(2, 0.5)
    rec = ReadoutRecord(QND_CANDIDATES, true_state)
    for _ in range(max_rounds):
        state = cool_to_ground(state, rng, nbar=0.0, logic_ion="Be", logic_level="down")
        state = apply_pulse(state, map_al)
        state = apply_pulse(state, map_be)
        if rng.random() >= mapping_fidelity:
            state = apply_pulse(state, flip)
        count, state, _ = detect(state, "Be", model, rng)
        posterior = bayes_update(posterior, count, model, response)
        state = spontaneous_decay(state, "Al", p1_channel, round_duration, rng)
        if decay:
            state = spontaneous_decay(state, "Al", clock_channel, round_duration, rng)
        pops = state.level_populations("Al")
        rec.counts.append(count)
        rec.posteriors.append(posterior.tolist())
        rec.spectroscopy_populations.append({"S": pops["S"] + pops["P1"], "P0": pops["P0"]})
        rec.rounds += 1
        if posterior.max() >= p_des:
            break
    else:
        rec.timed_out = True
    rec.decision = QND_CANDIDATES[int(np.argmax(posterior))]
    return rec


__all__ = [
    "DetectionModel",
    "QND_CANDIDATES",
    "ReadoutRecord",
    "SchmidtResult",
    "bayes_update",
    "bayes_update_batch",
    "detect",
    "likelihoods",
    "qnd_response",
    "run_qnd_readout",
    "run_schmidt_readout",
]
