"""Attention-distance analysis between trained models.

For two models run on the same tokens, each (self-attention sublayer, token)
pair yields a head-to-head cost matrix of 1-Wasserstein distances between
attention distributions; a minimum-cost head matching gives the distance for
that token and layer, and the grand mean averages over all of them. Totals
are accumulated with ``math.fsum`` so results do not depend on summation
order (distance(A, B) == distance(B, A) bit-for-bit).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .model import AttentionCapture, TransformerStack, forward
from .tensor_core import no_grad

__all__ = [
    "AttentionDump",
    "DistanceReport",
    "DistanceTable",
    "capture",
    "save_dump",
    "load_dump",
    "emd_1d",
    "hungarian",
    "attention_distance",
    "distance_matrix",
    "group_pair_means",
]

DUMP_VERSION = 1


@dataclass
class AttentionDump:
    """Per-sublayer, per-head, per-token attention distributions of one model.

    ``probs[i, h, tok]`` is head h's distribution over attended positions at
    the i-th self-attention sublayer; rows sum to 1 and, under causal masking,
    are supported on positions <= tok.
    """

    model_id: str
    ordering: str
    heads: int
    t: int
    probs: np.ndarray  # [s_count, heads, t, t]

    @property
    def s_count(self) -> int:
        return self.probs.shape[0]


def capture(model: TransformerStack, tokens, model_id: str = "") -> AttentionDump:
    """Run inference on one token sequence recording every self-attention map.

    Cross-attention sublayers are excluded from the dump.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ValueError("capture expects a single 1-d token sequence")
    sink = AttentionCapture()
    with no_grad():
        forward(model, tokens, capture=sink)
    return AttentionDump(
        model_id=model_id,
        ordering=str(model.config.ordering),
        heads=model.config.heads,
        t=int(tokens.size),
        probs=sink.self_attention_stack(),
    )


def save_dump(dump: AttentionDump, path) -> None:
    """JSON Lines: a header then one line per (layer, head, token) vector.

    Floats serialize via repr (shortest round-trip form), so loading restores
    the exact values.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {
                    "v": DUMP_VERSION,
                    "kind": "header",
                    "tool_version": __version__,
                    "model_id": dump.model_id,
                    "ordering": dump.ordering,
                    "heads": dump.heads,
                    "t": dump.t,
                    "s_count": dump.s_count,
                },
                sort_keys=True,
            )
            + "\n"
        )
        for i in range(dump.s_count):
            for h in range(dump.heads):
                for tok in range(dump.t):
                    fh.write(
                        json.dumps(
                            {
                                "layer": i,
                                "head": h,
                                "token": tok,
                                "p": dump.probs[i, h, tok].tolist(),
                            }
                        )
                        + "\n"
                    )


def load_dump(path) -> AttentionDump:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"empty dump file: {path}")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise ValueError("dump file must start with a header line")
    if header.get("v") != DUMP_VERSION:
        raise ValueError(f"unsupported dump version {header.get('v')}")
    probs = np.zeros((header["s_count"], header["heads"], header["t"], header["t"]))
    seen = 0
    for line in lines[1:]:
        if not line.strip():
            continue
        doc = json.loads(line)
        probs[doc["layer"], doc["head"], doc["token"]] = doc["p"]
        seen += 1
    expected = header["s_count"] * header["heads"] * header["t"]
    if seen != expected:
        raise ValueError(f"dump holds {seen} vectors, expected {expected}")
    return AttentionDump(
        model_id=header["model_id"],
        ordering=header["ordering"],
        heads=header["heads"],
        t=header["t"],
        probs=probs,
    )


def emd_1d(p, q, tol: float = 1e-6) -> float:
    """1-Wasserstein distance between same-length distributions on the integer
    line with unit ground spacing: sum_i |CDF_p(i) - CDF_q(i)|."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"emd_1d needs two same-length vectors, got {p.shape}, {q.shape}")
    if abs(p.sum() - 1.0) > tol or abs(q.sum() - 1.0) > tol:
        raise ValueError("emd_1d inputs must each sum to 1 within tolerance")
    return float(np.abs(np.cumsum(p - q)).sum())


def _assignment_min(cost: np.ndarray) -> tuple[list[int], float]:
    """O(n^3) shortest-augmenting-path assignment (row potentials u, column
    potentials v); returns (row -> column, optimal total)."""
    n = cost.shape[0]
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    match = [0] * n
    for j in range(1, n + 1):
        match[p[j] - 1] = j - 1
    total = math.fsum(cost[i, match[i]] for i in range(n))
    return match, total


def hungarian(cost) -> tuple[tuple[int, ...], float]:
    """Minimum-cost perfect matching on a square cost matrix.

    Returns (matching, total) where matching[i] is the column assigned to row
    i. Among cost-equal optima the lexicographically smallest matching wins
    (row 0's column minimized first, then row 1's, ...). Totals are fsum'd
    over the selected entries, so they are independent of summation order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ValueError(f"cost matrix must be square and non-empty, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    if (cost < 0).any():
        raise ValueError("cost matrix must be non-negative")
    n = cost.shape[0]
    _, best = _assignment_min(cost)
    # lexicographic refinement: fix rows in order to the lowest column index
    # that still admits an optimal completion
    tol = 1e-12 * max(1.0, abs(best))
    chosen: list[int] = []
    free_cols = list(range(n))
    remaining_target = best
    for i in range(n):
        rest_rows = list(range(i + 1, n))
        for pos, c in enumerate(free_cols):
            rest_cols = free_cols[:pos] + free_cols[pos + 1 :]
            if rest_rows:
                _, sub = _assignment_min(cost[np.ix_(rest_rows, rest_cols)])
            else:
                sub = 0.0
            if cost[i, c] + sub <= remaining_target + tol:
                chosen.append(c)
                free_cols = rest_cols
                remaining_target -= cost[i, c]
                break
        else:  # unreachable unless float drift exceeds tol
            raise RuntimeError("assignment refinement failed to find an optimal column")
    total = math.fsum(cost[i, c] for i, c in enumerate(chosen))
    return tuple(chosen), total


@dataclass
class DistanceReport:
    """Per-(sublayer, token) matching costs and their aggregates."""

    model_a: str
    model_b: str
    distances: np.ndarray  # [s_count, t]
    per_layer_mean: np.ndarray  # [s_count]
    grand_mean: float


def attention_distance(dump_a: AttentionDump, dump_b: AttentionDump) -> DistanceReport:
    """Minimal total head-matching EMD per (sublayer ordinal, token).

    Sublayers pair by self-attention ordinal (i-th `s` with i-th `s`), so the
    dumps must agree on head count, token count, and number of self-attention
    sublayers. The grand mean averages the per-(token, layer) minima.
    """
    for attr in ("heads", "t", "s_count"):
        va, vb = getattr(dump_a, attr), getattr(dump_b, attr)
        if va != vb:
            raise ValueError(f"incompatible dumps: {attr} {va} != {vb}")
    for dump in (dump_a, dump_b):
        drift = np.abs(dump.probs.sum(axis=-1) - 1.0).max()
        if drift > 1e-9:
            raise ValueError(
                f"dump {dump.model_id!r} rows deviate from unit mass by {drift:g}"
            )
    layers, heads, t = dump_a.s_count, dump_a.heads, dump_a.t
    distances = np.zeros((layers, t))
    for i in range(layers):
        for tok in range(t):
            pa = dump_a.probs[i, :, tok, :]  # [H, t]
            pb = dump_b.probs[i, :, tok, :]
            diff = np.cumsum(pa[:, None, :] - pb[None, :, :], axis=-1)
            cost = np.abs(diff).sum(axis=-1)
            _, total = hungarian(cost)
            distances[i, tok] = total
    per_layer = np.array([math.fsum(distances[i]) / t for i in range(layers)])
    grand = math.fsum(distances.reshape(-1)) / (layers * t)
    return DistanceReport(
        model_a=dump_a.model_id,
        model_b=dump_b.model_id,
        distances=distances,
        per_layer_mean=per_layer,
        grand_mean=grand,
    )


@dataclass
class DistanceTable:
    model_ids: list[str]
    grand_means: np.ndarray  # [n, n], symmetric, zero diagonal


def distance_matrix(dumps) -> DistanceTable:
    """All pairwise grand means; each unordered pair is computed once."""
    dumps = list(dumps)
    if len(dumps) < 2:
        raise ValueError("distance_matrix needs at least 2 dumps")
    n = len(dumps)
    table = np.zeros((n, n))
    for i in range(n):
        table[i, i] = attention_distance(dumps[i], dumps[i]).grand_mean
        for j in range(i + 1, n):
            g = attention_distance(dumps[i], dumps[j]).grand_mean
            table[i, j] = g
            table[j, i] = g
    return DistanceTable(model_ids=[d.model_id for d in dumps], grand_means=table)


def group_pair_means(table: DistanceTable, group_of: dict[str, str]) -> dict:
    """Mean grand distance per unordered group pair (distinct models only).

    With two groups this reproduces the usual layout: two within-group cells
    and one cross-group cell averaged over every combination.
    """
    sums: dict[tuple[str, str], list[float]] = {}
    ids = table.model_ids
    for i, j in itertools.combinations(range(len(ids)), 2):
        ga, gb = group_of[ids[i]], group_of[ids[j]]
        key = tuple(sorted((ga, gb)))
        sums.setdefault(key, []).append(float(table.grand_means[i, j]))
    return {key: math.fsum(vals) / len(vals) for key, vals in sums.items()}
