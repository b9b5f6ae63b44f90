"""SimPO objective over per-token log-probabilities.

The policy model is not part of this package: sequences arrive as lists of
token log-probs and the loss, its gradient with respect to every log-prob,
and a finite-difference cross-check are computed here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

# reference training hyperparameters
DEFAULT_BETA = 2.5
DEFAULT_GAMMA = 1.4


@dataclass(frozen=True, init=False)
class SeqLogProbs:
    logps: tuple[float, ...]

    def __init__(self, logps: Iterable[float]):
        vals = tuple(float(x) for x in logps)
        if not vals:
            raise ValueError("a sequence needs at least one token log-prob")
        for x in vals:
            if not math.isfinite(x) or x > 0:
                raise ValueError(f"log-probs must be finite and <= 0, got {x}")
        object.__setattr__(self, "logps", vals)

    def __len__(self) -> int:
        return len(self.logps)


@dataclass(frozen=True)
class SimpoParams:
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class Pair:
    winner: SeqLogProbs
    loser: SeqLogProbs


@dataclass(frozen=True)
class SimpoBatch:
    pairs: tuple[Pair, ...]
    params: SimpoParams = SimpoParams()

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise ValueError("batch must contain at least one pair")

    @classmethod
    def from_lists(cls, pairs: Iterable[tuple[Sequence[float], Sequence[float]]],
                   beta: float = DEFAULT_BETA, gamma: float = DEFAULT_GAMMA) -> "SimpoBatch":
        return cls(tuple(Pair(SeqLogProbs(w), SeqLogProbs(l)) for w, l in pairs), SimpoParams(beta, gamma))


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def log_sigmoid(z: float) -> float:
    return -softplus(-z)


def _reward(logps: Sequence[float], beta: float) -> float:
    return beta * math.fsum(logps) / len(logps)


def reward(seq: SeqLogProbs, params: SimpoParams) -> float:
    """Length-normalized reward: beta * mean token log-prob."""
    return _reward(seq.logps, params.beta)


def margin(winner: SeqLogProbs, loser: SeqLogProbs, params: SimpoParams) -> float:
    """r_w - r_l - gamma, the argument of the sigmoid."""
    return reward(winner, params) - reward(loser, params) - params.gamma


def pair_prob(winner: SeqLogProbs, loser: SeqLogProbs, params: SimpoParams) -> float:
    return sigmoid(margin(winner, loser, params))


def _loss(pairs: Sequence[tuple[Sequence[float], Sequence[float]]], beta: float, gamma: float) -> float:
    terms = [softplus(-(_reward(w, beta) - _reward(l, beta) - gamma)) for w, l in pairs]
    return math.fsum(terms) / len(terms)


def loss(batch: SimpoBatch) -> float:
    """Mean of -log sigmoid(r_w - r_l - gamma) over the batch."""
    p = batch.params
    return _loss([(pr.winner.logps, pr.loser.logps) for pr in batch.pairs], p.beta, p.gamma)


@dataclass(frozen=True)
class PairGrad:
    winner: tuple[float, ...]
    loser: tuple[float, ...]


def loss_grad(batch: SimpoBatch) -> list[PairGrad]:
    """Analytic dL/dlogp for every token of every pair.

    With z = r_w - r_l - gamma and N pairs, each winner token gets
    -sigmoid(-z) * beta / (N |y_w|) and each loser token
    +sigmoid(-z) * beta / (N |y_l|).
    """
    beta, n = batch.params.beta, len(batch.pairs)
    out = []
    for pr in batch.pairs:
        s = sigmoid(-margin(pr.winner, pr.loser, batch.params))
        gw = -s * beta / (n * len(pr.winner))
        gl = s * beta / (n * len(pr.loser))
        out.append(PairGrad((gw,) * len(pr.winner), (gl,) * len(pr.loser)))
    return out


def finite_difference_grad(batch: SimpoBatch, h: float = 1e-5) -> list[PairGrad]:
    """Central differences of the loss, one token at a time.

    Perturbed log-probs may leave the valid domain (e.g. above 0), so this
    evaluates the raw formula rather than going through SeqLogProbs.

    A token only enters its own pair's term of the batch mean, so the
    difference is taken on that term and divided by the batch size. This
    is the same quotient as differencing the whole mean, minus the
    cancellation against the other pairs' terms that would swamp small
    gradients of saturated pairs.
    """
    beta, gamma = batch.params.beta, batch.params.gamma
    n = len(batch.pairs)
    grads = []
    for pr in batch.pairs:
        w, l = list(pr.winner.logps), list(pr.loser.logps)
        sides = []
        for seq in (w, l):
            g = []
            for j in range(len(seq)):
                orig = seq[j]
                seq[j] = orig + h
                up = _loss([(w, l)], beta, gamma)
                seq[j] = orig - h
                down = _loss([(w, l)], beta, gamma)
                seq[j] = orig
                g.append((up - down) / (2 * h * n))
            sides.append(tuple(g))
        grads.append(PairGrad(sides[0], sides[1]))
    return grads


@dataclass(frozen=True)
class GradCheck:
    max_rel_error: float
    max_abs_error: float
    n_entries: int

    def ok(self, rtol: float = 1e-6) -> bool:
        return self.max_rel_error <= rtol


def relative_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def check_gradients(batch: SimpoBatch, h: float = 1e-5) -> GradCheck:
    analytic = loss_grad(batch)
    numeric = finite_difference_grad(batch, h)
    rel = absd = 0.0
    n = 0
    for ga, gn in zip(analytic, numeric):
        for a, b in zip(ga.winner + ga.loser, gn.winner + gn.loser):
            rel = max(rel, relative_error(a, b))
            absd = max(absd, abs(a - b))
            n += 1
    return GradCheck(rel, absd, n)


def load_pairs(path: str | Path, params: SimpoParams | None = None) -> tuple[list[str], SimpoBatch]:
    """Read {"pair_id", "winner_logps", "loser_logps"} JSONL."""
    ids, pairs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(Pair(SeqLogProbs(obj["winner_logps"]), SeqLogProbs(obj["loser_logps"])))
                ids.append(str(obj.get("pair_id", lineno)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad log-prob line ({exc})") from None
    return ids, SimpoBatch(tuple(pairs), params or SimpoParams())
