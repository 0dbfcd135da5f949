"""Budgeted selection loop: initialization plus train/predict/score/select rounds.

The loop is model-agnostic: anything satisfying :class:`PredictionProvider`
can drive it, from the bundled synthetic planner to a file-backed replay of
an externally trained model's predictions. A random-selection comparator runs
the same schedule without scoring.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .criteria import ClipPrediction, CriterionScores, load_predictions, rank_and_take, score_pool
from .diversity import StratumAllocation, ego_diversity_init
from .pool import ClipRecord, SelectionState

INIT_MODES = ("random", "ego-diversity")
#: Ranking keys: the three single criteria plus their mixture.
CRITERIA = ("de", "sc", "au", "mix")


@dataclass(frozen=True)
class ActiveConfig:
    """All hyperparameters of one selection run.

    The budget identity ``budget = n_init + n_rounds * n_per_round`` is
    enforced here; ``budget <= pool size`` is checked against a concrete pool.
    """

    budget: int
    n_init: int
    n_rounds: int
    n_per_round: int
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    tau_c: int = 4
    eps_a: float = 0.5
    delta_d: float = 3.0
    seed: int = 0
    init_mode: str = "ego-diversity"

    def __post_init__(self) -> None:
        if self.n_init < 1:
            raise ValueError(f"n_init must be >= 1, got {self.n_init}")
        if self.n_rounds < 0 or self.n_per_round < 0:
            raise ValueError("n_rounds and n_per_round must be >= 0")
        if self.n_rounds > 0 and self.n_per_round < 1:
            raise ValueError("n_per_round must be >= 1 when rounds are scheduled")
        if self.budget != self.n_init + self.n_rounds * self.n_per_round:
            raise ValueError(
                f"budget {self.budget} != n_init {self.n_init} + "
                f"{self.n_rounds} rounds * {self.n_per_round}"
            )
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.tau_c < 1:
            raise ValueError(f"tau_c must be >= 1, got {self.tau_c}")
        if not 0 <= self.eps_a <= 1:
            raise ValueError(f"eps_a must be in [0, 1], got {self.eps_a}")
        if self.delta_d <= 0:
            raise ValueError(f"delta_d must be > 0, got {self.delta_d}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")

    def validate_for_pool(self, n_clips: int) -> None:
        if self.budget > n_clips:
            raise ValueError(f"budget {self.budget} exceeds pool size {n_clips}")


class PredictionProvider(Protocol):
    """Behavioral contract for the trained model behind the loop.

    ``predict`` must be deterministic given the provider state and cover every
    requested id exactly once.
    """

    def train(self, labeled_ids: Sequence[str]) -> None: ...

    def predict(self, ids: Sequence[str]) -> Mapping[str, ClipPrediction]: ...


class FilePredictionProvider:
    """Replays per-round prediction files written by an external model.

    The k-th call to :meth:`train` selects ``predictions_round_<k>.jsonl``
    in the given directory; :meth:`predict` then serves from that file.
    """

    def __init__(self, directory: str | os.PathLike, pattern: str = "predictions_round_{round}.jsonl"):
        self.directory = os.fspath(directory)
        self.pattern = pattern
        self.round_index = 0
        self.trained_ids: tuple[str, ...] = ()

    def train(self, labeled_ids: Sequence[str]) -> None:
        self.round_index += 1
        self.trained_ids = tuple(labeled_ids)

    def predict(self, ids: Sequence[str]) -> dict[str, ClipPrediction]:
        path = os.path.join(self.directory, self.pattern.format(round=self.round_index))
        available = load_predictions(path)
        out: dict[str, ClipPrediction] = {}
        for clip_id in ids:
            if clip_id not in available:
                raise KeyError(f"missing prediction for clip {clip_id!r} in {path}")
            out[clip_id] = available[clip_id]
        return out


def random_init(clips: Sequence[ClipRecord], n_init: int, seed: int) -> list[str]:
    """Seeded uniform sample of n_init clip ids, returned in pool order."""
    if n_init > len(clips):
        raise ValueError(f"n_init {n_init} exceeds pool size {len(clips)}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(clips), size=n_init, replace=False)
    return [clips[i].id for i in sorted(picked)]


def _check_coverage(ids: Sequence[str], predictions: Mapping[str, ClipPrediction]) -> None:
    for clip_id in ids:
        if clip_id not in predictions:
            raise KeyError(f"provider returned no prediction for clip {clip_id!r}")


def ranking_key(row: CriterionScores, criterion: str) -> float:
    if criterion == "de":
        return row.de_norm
    if criterion == "sc":
        return row.sc_norm
    if criterion == "au":
        return row.au_norm
    if criterion == "mix":
        return row.overall
    raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")


@dataclass
class RoundTrace:
    """What one scored round did: who was picked, and from what scores."""

    round_index: int
    selected_ids: tuple[str, ...]
    scores: tuple[CriterionScores, ...] = ()
    summary: dict = field(default_factory=dict)
    # Hypothetical top-n sets under each single criterion, for overlap analysis.
    criterion_picks: dict[str, tuple[str, ...]] = field(default_factory=dict)


def _summarize(rows: Sequence[CriterionScores]) -> dict:
    def mean(vals):
        return float(np.mean(vals)) if vals else 0.0

    return {
        "n_scored": len(rows),
        "de_raw_mean": mean([r.de_raw for r in rows]),
        "sc_raw_mean": mean([r.sc_raw for r in rows]),
        "au_raw_mean": mean([r.au_raw for r in rows]),
        "overall_mean": mean([r.overall for r in rows]),
        "overall_max": float(max((r.overall for r in rows), default=0.0)),
    }


def run_round(
    clips: Sequence[ClipRecord],
    state: SelectionState,
    provider: PredictionProvider,
    config: ActiveConfig,
    round_index: int,
    *,
    criterion: str = "mix",
    n_select: int | None = None,
) -> RoundTrace:
    """One train/predict/score/select cycle; the state is updated on success.

    The provider is trained on the current labeled set, every unlabeled clip
    is scored, and the top clips by the chosen ranking key move to labeled. A
    provider failure propagates before any state mutation.
    """
    n = config.n_per_round if n_select is None else n_select
    unlabeled = state.unlabeled_ids
    if n > len(unlabeled):
        raise ValueError(f"cannot select {n} clips, only {len(unlabeled)} unlabeled")
    clips_by_id = {c.id: c for c in clips}
    provider.train(state.labeled_ids)
    predictions = provider.predict(unlabeled)
    _check_coverage(unlabeled, predictions)
    rows = score_pool(
        [clips_by_id[i] for i in unlabeled],
        predictions,
        alpha=config.alpha,
        beta=config.beta,
        eps_a=config.eps_a,
        delta_d=config.delta_d,
    )
    selected = rank_and_take({r.clip_id: ranking_key(r, criterion) for r in rows}, n)
    picks = {
        c: tuple(rank_and_take({r.clip_id: ranking_key(r, c) for r in rows}, n))
        for c in CRITERIA
    }
    state.add_round(round_index, selected)
    return RoundTrace(
        round_index=round_index,
        selected_ids=tuple(selected),
        scores=tuple(rows),
        summary=_summarize(rows),
        criterion_picks=picks,
    )


@dataclass
class RunResult:
    state: SelectionState
    traces: list[RoundTrace]
    init_allocations: list[StratumAllocation] | None = None


def run(
    clips: Sequence[ClipRecord],
    provider: PredictionProvider,
    config: ActiveConfig,
    *,
    criterion: str = "mix",
    strategy: str = "active",
) -> RunResult:
    """Full budgeted selection: initialization plus n_rounds selection rounds.

    ``strategy="random"`` replaces the scored rounds with seeded uniform picks
    (the random-selection comparator); the provider is then never consulted.
    The labeled set ends at exactly the configured budget, with disjoint
    per-round increments, and is bit-reproducible for a fixed seed.
    """
    if strategy not in ("active", "random"):
        raise ValueError(f"strategy must be 'active' or 'random', got {strategy!r}")
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    config.validate_for_pool(len(clips))

    state = SelectionState(c.id for c in clips)
    allocations = None
    if config.init_mode == "ego-diversity":
        from .diversity import allocate_budget, stratify

        strata = stratify(clips, config.tau_c)
        allocations = allocate_budget(
            {key: len(members) for key, members in strata.items()},
            min(config.n_init, len(clips)),
            config.gamma,
        )
        init_ids = ego_diversity_init(clips, config.n_init, config.gamma, config.tau_c)
    else:
        init_ids = random_init(clips, config.n_init, config.seed)
    state.add_round(0, init_ids)
    traces: list[RoundTrace] = []

    for itr in range(1, config.n_rounds + 1):
        remaining = len(state.unlabeled_ids)
        # Short final round if the pool runs out (unreachable when budget <= N).
        n_select = min(config.n_per_round, remaining)
        if n_select == 0:
            break
        if strategy == "active":
            traces.append(
                run_round(
                    clips, state, provider, config, itr,
                    criterion=criterion, n_select=n_select,
                )
            )
        else:
            rng = np.random.default_rng([config.seed, itr])
            unlabeled = state.unlabeled_ids
            picked = rng.choice(len(unlabeled), size=n_select, replace=False)
            ids = [unlabeled[i] for i in sorted(picked)]
            state.add_round(itr, ids)
            traces.append(RoundTrace(round_index=itr, selected_ids=tuple(ids)))
    return RunResult(state=state, traces=traces, init_allocations=allocations)


def derive_schedule(n_pool: int, fraction: float = 0.10, n_rounds: int = 2) -> tuple[int, int, int, int]:
    """Default budget schedule: an initial fraction plus n_rounds equal slices.

    Returns (budget, n_init, n_rounds, n_per_round); with the defaults this is
    the 10% + 10% + 10% schedule.
    """
    n_init = max(1, round(n_pool * fraction))
    budget = n_init * (1 + n_rounds)
    if budget > n_pool:
        raise ValueError(f"derived budget {budget} exceeds pool size {n_pool}")
    return budget, n_init, n_rounds, n_init


__all__ = [
    "ActiveConfig",
    "CRITERIA",
    "FilePredictionProvider",
    "PredictionProvider",
    "RoundTrace",
    "RunResult",
    "derive_schedule",
    "random_init",
    "ranking_key",
    "run",
    "run_round",
]
