"""Class-wise noise normalization against a clean server dataset.

After estimation, each class k demands the fraction by which its noise ratio
exceeds the participant's best class. The server answers every demanding
class with the same count u (the least it can satisfy), which keeps the
per-class noise ratios moving toward each other instead of replacing one
imbalance with another. Only (class id, count) pairs travel to the server;
instances only ever travel back.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from ._rng import EXCHANGE, derive_rng, derive_seed
from .data import Dataset, concat_datasets
from .estimator import NoiseEstimate, estimate_noise
from .trainer import TrainerConfig

logger = logging.getLogger(__name__)


class AllocationError(ValueError):
    """A transfer was requested that the server cannot cover."""


@dataclass(frozen=True)
class DemandPlan:
    """Per-class demand state, filled in two stages.

    ``fractions`` and ``demanded`` come from the participant's estimate;
    ``delta1`` (provisional grants), ``u`` (the minimum grant over demanding
    classes) and ``final`` exist only after the server has answered.
    ``starved`` marks the all-or-nothing zero branch: some demanding class
    could not be served at all, so nobody receives anything.
    """

    fractions: tuple[float, ...]
    demanded: tuple[int, ...]
    delta1: tuple[int, ...] | None = None
    u: int | None = None
    final: tuple[int, ...] | None = None
    starved: bool = False

    @property
    def demanding_classes(self) -> tuple[int, ...]:
        return tuple(k for k, n in enumerate(self.demanded) if n > 0)


@dataclass(frozen=True)
class ExchangeTranscript:
    """Everything that crossed the wire, for audit.

    ``demands`` is the only participant-to-server message and carries class
    ids and counts, never instances. ``transfers`` maps class to the server
    instance ids sent back; ``truncated`` counts grants dropped to keep a
    class at its pre-exchange size.
    """

    demands: dict[int, int]
    delta1: tuple[int, ...]
    u: int
    final: tuple[int, ...]
    transfers: dict[int, tuple[int, ...]]
    truncated: dict[int, int]
    starved: bool


@dataclass(frozen=True)
class ExchangeResult:
    """Outcome of one participant's normalization pass.

    ``dataset`` is the new training set (noise-free survivors plus
    transfers; removed instances are gone for good), ``s_hat`` the per-class
    id tuples of that set, and ``estimate`` the re-run three-fold estimate on
    it.
    """

    dataset: Dataset
    s_hat: tuple[tuple[int, ...], ...]
    estimate: NoiseEstimate
    transcript: ExchangeTranscript


def compute_demands(estimate: NoiseEstimate, class_sizes, demand_cap: str = "size") -> DemandPlan:
    """Turn an estimate into per-class demanded counts.

    F_k = beta_k - beta_min, so the best class demands nothing; counts floor
    F_k |D_k| to never exceed the stated fraction. ``demand_cap='z'`` applies
    the alternative reading that additionally caps F_k at beta_min; the
    default relies on the explicit post-exchange size cap instead.
    """
    if demand_cap not in ("size", "z"):
        raise ValueError(f"demand_cap must be 'size' or 'z', got {demand_cap!r}")
    class_sizes = [int(s) for s in class_sizes]
    if len(class_sizes) != len(estimate.per_class):
        raise ValueError("class_sizes length disagrees with the estimate")
    fractions, demanded = [], []
    for est, size in zip(estimate.per_class, class_sizes):
        f = est.beta - estimate.beta_min
        if demand_cap == "z":
            f = min(f, estimate.beta_min)
        fractions.append(f)
        demanded.append(int(np.floor(f * size)))
    return DemandPlan(fractions=tuple(fractions), demanded=tuple(demanded))


def fulfill_demands(plan: DemandPlan, server_class_sizes) -> DemandPlan:
    """Server side: grant every demanding class the same minimal count.

    Provisional grants are capped by server stock; u is their minimum over
    demanding classes. u = 0 means some demanding class cannot be served, in
    which case nobody is (equal treatment is the point), flagged as starved.
    """
    server_class_sizes = [int(s) for s in server_class_sizes]
    if len(server_class_sizes) != len(plan.demanded):
        raise ValueError("server_class_sizes length disagrees with the plan")
    delta1 = tuple(
        min(server_class_sizes[k], plan.demanded[k]) if plan.demanded[k] > 0 else 0
        for k in range(len(plan.demanded))
    )
    demanding = plan.demanding_classes
    if not demanding:
        return replace(plan, delta1=delta1, u=0, final=tuple(0 for _ in plan.demanded))
    u = min(delta1[k] for k in demanding)
    if u == 0:
        starved_classes = [k for k in demanding if delta1[k] == 0]
        logger.warning(
            "server cannot serve class(es) %s; no transfers for this participant",
            starved_classes)
        return replace(plan, delta1=delta1, u=0,
                       final=tuple(0 for _ in plan.demanded), starved=True)
    final = tuple(u if plan.demanded[k] > 0 else 0 for k in range(len(plan.demanded)))
    return replace(plan, delta1=delta1, u=u, final=final)


def apply_exchange(participant: Dataset, estimate: NoiseEstimate, server: Dataset,
                   plan: DemandPlan, seed: int, trainer_config: TrainerConfig,
                   per_class_resplit: bool = False, train_fn=None) -> ExchangeResult:
    """Drop removed instances, pull the granted server instances, re-estimate.

    Transfers are sampled uniformly without replacement from the server's
    class-k pool; each class is then capped at its pre-exchange size (the
    grant rule makes the cap unreachable, but a hit is truncated and
    reported). The returned estimate re-runs the three-fold procedure on the
    new dataset with a derived seed.
    """
    if plan.final is None:
        raise ValueError("plan has no final grants; run fulfill_demands first")
    c = participant.class_count
    if server.class_count != c:
        raise ValueError("server and participant disagree on the class space")
    overlap = set(int(i) for i in participant.ids) & set(int(i) for i in server.ids)
    if overlap:
        raise ValueError(f"participant and server share instance ids: {sorted(overlap)[:5]}")

    class_sizes = participant.class_sizes()
    parts = []
    s_hat: list[tuple[int, ...]] = []
    transfers: dict[int, tuple[int, ...]] = {}
    truncated: dict[int, int] = {}
    for k in range(c):
        survivors = participant.by_ids(estimate.per_class[k].noise_free_ids)
        grant = int(plan.final[k])
        pool = np.flatnonzero(server.observed_labels == k)
        if grant > pool.size:
            raise AllocationError(
                f"class {k}: granted {grant} but server holds only {pool.size}")
        room = int(class_sizes[k]) - survivors.n
        if grant > room:
            truncated[k] = grant - room
            logger.warning("class %d: truncating grant %d to %d to respect the size cap",
                           k, grant, room)
            grant = room
        if grant > 0:
            rng = derive_rng(seed, EXCHANGE, k)
            rows = np.sort(rng.choice(pool, size=grant, replace=False))
            chunk = server.take(rows)
            transfers[k] = tuple(int(i) for i in chunk.ids)
            parts.extend([survivors, chunk] if survivors.n else [chunk])
            s_hat.append(tuple(int(i) for i in survivors.ids) + transfers[k])
        else:
            if survivors.n:
                parts.append(survivors)
            s_hat.append(tuple(int(i) for i in survivors.ids))

    new_dataset = concat_datasets(parts, name=participant.name) if parts else participant.take(
        np.array([], dtype=np.int64))
    new_estimate = estimate_noise(
        new_dataset, trainer_config, derive_seed(seed, EXCHANGE, c),
        per_class_resplit=per_class_resplit, train_fn=train_fn)
    transcript = ExchangeTranscript(
        demands={k: plan.demanded[k] for k in plan.demanding_classes},
        delta1=plan.delta1,
        u=int(plan.u),
        final=plan.final,
        transfers=transfers,
        truncated=truncated,
        starved=plan.starved,
    )
    return ExchangeResult(dataset=new_dataset, s_hat=tuple(s_hat),
                          estimate=new_estimate, transcript=transcript)


def normalize_noise(participant: Dataset, estimate: NoiseEstimate, server: Dataset,
                    seed: int, trainer_config: TrainerConfig, demand_cap: str = "size",
                    per_class_resplit: bool = False, train_fn=None) -> ExchangeResult:
    """Full normalization pass: demands, grants, transfer, re-estimate."""
    plan = compute_demands(estimate, participant.class_sizes(), demand_cap=demand_cap)
    plan = fulfill_demands(plan, server.class_sizes())
    return apply_exchange(participant, estimate, server, plan, seed, trainer_config,
                          per_class_resplit=per_class_resplit, train_fn=train_fn)


def transcript_to_dict(transcript: ExchangeTranscript) -> dict:
    return {
        "demands": {str(k): v for k, v in sorted(transcript.demands.items())},
        "delta1": list(transcript.delta1),
        "u": transcript.u,
        "final": list(transcript.final),
        "transfers": {str(k): list(v) for k, v in sorted(transcript.transfers.items())},
        "truncated": {str(k): v for k, v in sorted(transcript.truncated.items())},
        "starved": transcript.starved,
    }
