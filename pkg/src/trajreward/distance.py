"""State-to-answer distances, distance matrices, normalized curves.

The distance from an intermediate state to a candidate answer is the
negative mean per-token log-probability of the answer continued from
that state. Row i of a trajectory's matrix corresponds to the state
holding steps 0..i-1 (row 0 is the bare prompt); column 0 is always the
trajectory's own final answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyAnswer, SingleAnswerBatch
from .scoring import CacheKey, LogProbSource, ScoreRequest, score_batch
from .trajectory import PromptBatch, Trajectory, canonicalize_answer, group_by_answer


@dataclass
class DistanceMatrix:
    """T x K matrix of state-to-answer distances for one trajectory."""

    traj_id: str
    values: np.ndarray
    answer_order: tuple[str, ...]
    correct: bool | None = None

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_answers(self) -> int:
        return self.values.shape[1]


@dataclass
class NormalizedCurve:
    """Per-state own-answer distance divided by the closest rival distance.

    A point below 1 means the state is strictly closer to its own final
    answer than to every rival answer.
    """

    traj_id: str
    points: np.ndarray
    correct: bool | None = None


def state_answer_distance(
    state_prefix: str,
    answer: str,
    source: LogProbSource,
    key: CacheKey | None = None,
) -> float:
    """Negative mean per-token log-probability of ``answer`` after the state."""
    canonical = canonicalize_answer(answer)
    if not canonical:
        raise EmptyAnswer("candidate answer canonicalizes to the empty string")
    response = source.score(ScoreRequest(state_prefix, canonical, key))
    return distance_from_logprobs(response.token_logprobs)


def distance_from_logprobs(token_logprobs) -> float:
    return -sum(token_logprobs) / len(token_logprobs)


def matrix_requests(traj: Trajectory, candidate_answers) -> list[ScoreRequest]:
    """All T x K score requests for one trajectory, row-major order."""
    answers = [canonicalize_answer(a) for a in candidate_answers]
    if any(not a for a in answers):
        raise EmptyAnswer(f"empty candidate answer for traj {traj.traj_id!r}")
    reqs = []
    for i in range(traj.num_steps):
        prefix = traj.state_prefix(i)
        for answer in answers:
            key = CacheKey(traj.prompt_id, traj.traj_id, i, "answer", answer)
            reqs.append(ScoreRequest(prefix, answer, key))
    return reqs


def build_distance_matrix(
    traj: Trajectory,
    candidate_answers,
    source: LogProbSource,
    parallelism: int = 1,
) -> DistanceMatrix:
    """Distance matrix of ``traj`` against the candidates (own answer first)."""
    answers = tuple(canonicalize_answer(a) for a in candidate_answers)
    if answers and answers[0] != canonicalize_answer(traj.final_answer):
        raise ValueError("candidate 0 must be the trajectory's own answer")
    reqs = matrix_requests(traj, answers)
    responses = score_batch(reqs, source, parallelism)
    values = np.array(
        [distance_from_logprobs(r.token_logprobs) for r in responses]
    ).reshape(traj.num_steps, len(answers))
    if (values < 0).any():
        raise AssertionError("negative distance from a scorer response")
    return DistanceMatrix(traj.traj_id, values, answers, traj.correct)


def candidate_order(groups, own_canonical: str) -> list[str]:
    """Own answer first, then the remaining group answers in group order."""
    return [own_canonical] + [g.canonical_answer for g in groups if g.canonical_answer != own_canonical]


def batch_distance_matrices(
    batch: PromptBatch, source: LogProbSource, parallelism: int = 1
) -> dict[str, DistanceMatrix]:
    """Distance matrices for every trajectory of a prompt batch.

    All cells of all matrices are scored through one batched call, so the
    result is identical for any worker count.
    """
    groups = group_by_answer(batch)
    per_traj: list[tuple[Trajectory, tuple[str, ...], list[ScoreRequest]]] = []
    all_reqs: list[ScoreRequest] = []
    for traj in batch.trajectories:
        answers = tuple(candidate_order(groups, canonicalize_answer(traj.final_answer)))
        reqs = matrix_requests(traj, answers)
        per_traj.append((traj, answers, reqs))
        all_reqs.extend(reqs)
    responses = score_batch(all_reqs, source, parallelism)
    matrices: dict[str, DistanceMatrix] = {}
    pos = 0
    for traj, answers, reqs in per_traj:
        chunk = responses[pos : pos + len(reqs)]
        pos += len(reqs)
        values = np.array(
            [distance_from_logprobs(r.token_logprobs) for r in chunk]
        ).reshape(traj.num_steps, len(answers))
        matrices[traj.traj_id] = DistanceMatrix(traj.traj_id, values, answers, traj.correct)
    return matrices


def normalized_curve(matrix: DistanceMatrix) -> NormalizedCurve:
    """Own-answer distance over the minimum rival distance, per state.

    A rival distance of exactly 0 yields +inf (the state reads as
    inconsistent) unless the own distance is also 0, which is a tie and
    yields 1.0, keeping "point <= 1" aligned with the consistency count.
    """
    if matrix.num_answers < 2:
        raise SingleAnswerBatch("normalized curve needs at least two distinct answers")
    own = matrix.values[:, 0]
    rival = matrix.values[:, 1:].min(axis=1)
    points = np.empty(matrix.num_states)
    for i in range(matrix.num_states):
        if rival[i] == 0.0:
            points[i] = 1.0 if own[i] == 0.0 else np.inf
        else:
            points[i] = own[i] / rival[i]
    return NormalizedCurve(matrix.traj_id, points, matrix.correct)


def write_matrices(matrices, path) -> None:
    """Export matrices as line-delimited JSON for plotting and analysis."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in matrices:
            rec = {
                "traj_id": m.traj_id,
                "T": m.num_states,
                "K": m.num_answers,
                "answer_order": list(m.answer_order),
                "rows": [[float(x) for x in row] for row in m.values],
                "correct": m.correct,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_matrices(path) -> list[DistanceMatrix]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                DistanceMatrix(
                    rec["traj_id"],
                    np.array(rec["rows"], dtype=float),
                    tuple(rec["answer_order"]),
                    rec.get("correct"),
                )
            )
    return out
