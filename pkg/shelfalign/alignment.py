"""Global alignment of a detected planogram against its reference.

Needleman-Wunsch with quantity-weighted scores: a substitution scores +q_t on a type match
and -q_t otherwise, skipping a reference group costs q_t and skipping a detected group costs
q_d. Rows of the score matrix index the detected planogram, columns the reference.
"""

import logging
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from shelfalign.types import (
    DET_GAP_TOKEN,
    REF_GAP_TOKEN,
    AlignedPair,
    AlignmentOutcome,
    ComplianceLabel,
    Move,
    Planogram,
    PlanogramEntry,
    ScoreMatrix,
)

logger = logging.getLogger(__name__)


def substitution_score(det: PlanogramEntry, ref: PlanogramEntry) -> int:
    if ref.quantity < 1:
        raise ValueError(f"reference entry {ref.group_type!r} must have a positive quantity")
    # Sentinel det types never equal a reference id, which cannot be a sentinel
    return ref.quantity if det.group_type == ref.group_type else -ref.quantity


def fill_score_matrix(det: Planogram, ref: Planogram) -> ScoreMatrix:
    rows, cols = len(det) + 1, len(ref) + 1
    values = np.zeros((rows, cols), dtype=np.int64)
    moves = np.zeros((rows, cols), dtype=np.int8)
    values[:, 0] = -np.arange(rows)
    values[0, :] = -np.arange(cols)
    moves[1:, 0] = Move.UP
    moves[0, 1:] = Move.LEFT

    for d in range(1, rows):
        det_entry = det.entries[d - 1]
        for t in range(1, cols):
            ref_entry = ref.entries[t - 1]
            # Order fixes the tie-break: diagonal, then skip reference, then skip detected
            options = (
                (values[d - 1, t - 1] + substitution_score(det_entry, ref_entry), Move.DIAG),
                (values[d, t - 1] - ref_entry.quantity, Move.LEFT),
                (values[d - 1, t] - det_entry.quantity, Move.UP),
            )
            best_value, best_move = options[0]
            for value, move in options[1:]:
                if value > best_value:
                    best_value, best_move = value, move
            values[d, t] = best_value
            moves[d, t] = best_move
    return ScoreMatrix(values=values, moves=moves)


def classify(det: Optional[PlanogramEntry], ref: Optional[PlanogramEntry]) -> ComplianceLabel:
    if det is None or ref is None or det.group_type != ref.group_type:
        return ComplianceLabel.NM
    if det.quantity == ref.quantity:
        return ComplianceLabel.MT
    return ComplianceLabel.MI if det.quantity < ref.quantity else ComplianceLabel.ME


def traceback(matrix: ScoreMatrix, det: Planogram, ref: Planogram) -> List[AlignedPair]:
    pairs: List[AlignedPair] = []
    d, t = len(det), len(ref)
    while d > 0 or t > 0:
        move = Move(int(matrix.moves[d, t]))
        if move == Move.DIAG:
            det_entry, ref_entry = det.entries[d - 1], ref.entries[t - 1]
            d, t = d - 1, t - 1
        elif move == Move.LEFT:
            det_entry, ref_entry = None, ref.entries[t - 1]
            t -= 1
        else:
            det_entry, ref_entry = det.entries[d - 1], None
            d -= 1
        pairs.append(AlignedPair(ref=ref_entry, det=det_entry, label=classify(det_entry, ref_entry)))
    pairs.reverse()
    return pairs


def match_ratio(pairs: Sequence[AlignedPair]) -> Fraction:
    """mu = sum of min(q_d, q_t) over same-type pairs, over the summed reference quantities."""
    denominator = sum(pair.ref.quantity for pair in pairs if pair.ref is not None)
    if denominator == 0:
        raise ValueError("match ratio undefined: no reference quantities in the alignment")
    numerator = sum(
        min(pair.det.quantity, pair.ref.quantity)
        for pair in pairs
        if pair.ref is not None and pair.det is not None and pair.det.group_type == pair.ref.group_type
    )
    return Fraction(numerator, denominator)


def align(det: Planogram, ref: Planogram) -> AlignmentOutcome:
    """Global alignment of detected (rows) against reference (columns) planograms.

    Equal-scoring moves resolve as DIAG, then LEFT (a reference group skipped, 'D' on the
    detected side), then UP (a detected group skipped, 'A' on the reference side).
    """
    if len(det) == 0 or len(ref) == 0:
        raise ValueError(f"cannot align empty planograms (detected {len(det)}, reference {len(ref)} groups)")
    matrix = fill_score_matrix(det, ref)
    pairs = traceback(matrix, det, ref)
    mu = match_ratio(pairs)
    logger.debug(f"Aligned {len(det)} detected vs {len(ref)} reference groups: score {matrix.score}, mu {mu}")
    return AlignmentOutcome(pairs=tuple(pairs), mu=mu, score=matrix.score)


def _side(token: tuple) -> Dict[str, Any]:
    return {"id": token[0], "quantity": token[1]}


def outcome_to_dict(outcome: AlignmentOutcome) -> Dict[str, Any]:
    pairs = []
    for pair in outcome.pairs:
        pairs.append({
            "ref": _side((pair.ref.group_type, pair.ref.quantity)) if pair.ref else _side(pair.ref_token),
            "det": _side((pair.det.group_type, pair.det.quantity)) if pair.det else _side(pair.det_token),
            "label": pair.label.value,
        })
    return {
        "pairs": pairs,
        "mu": float(outcome.mu),
        "mu_exact": f"{outcome.mu.numerator}/{outcome.mu.denominator}",
        "score": outcome.score,
    }


def render_alignment_table(outcome: AlignmentOutcome,
                           ground_truth: Optional[Sequence[ComplianceLabel]] = None) -> str:
    """Aligned text table, one column per pair."""
    ref_tokens = [pair.ref_token for pair in outcome.pairs]
    det_tokens = [pair.det_token for pair in outcome.pairs]
    rows = [
        ("o_t", [token for token, _ in ref_tokens]),
        ("q_t", [str(q) for _, q in ref_tokens]),
        ("o_d", [token for token, _ in det_tokens]),
        ("q_d", [str(q) for _, q in det_tokens]),
        ("Result", [label.value for label in outcome.labels]),
    ]
    if ground_truth is not None:
        if len(ground_truth) != len(outcome.pairs):
            raise ValueError(
                f"ground truth has {len(ground_truth)} labels for {len(outcome.pairs)} aligned pairs"
            )
        rows.append(("GT", [ComplianceLabel(label).value for label in ground_truth]))

    head_width = max(len(name) for name, _ in rows)
    col_widths = [max(len(cells[i]) for _, cells in rows) for i in range(len(outcome.pairs))]
    lines = []
    for name, cells in rows:
        padded = [cell.rjust(width) for cell, width in zip(cells, col_widths)]
        lines.append(" | ".join([name.ljust(head_width)] + padded))
    lines.append(f"mu = {float(outcome.mu):.4f} ({outcome.mu.numerator}/{outcome.mu.denominator})")
    return "\n".join(lines) + "\n"


def _entry_from(side: Dict[str, Any], gap_token: str) -> Optional[PlanogramEntry]:
    if side["id"] == gap_token and int(side["quantity"]) == 0:
        return None
    return PlanogramEntry(side["id"], int(side["quantity"]))


def outcome_from_dict(raw: Dict[str, Any]) -> AlignmentOutcome:
    """Inverse of ``outcome_to_dict``; boxes are not stored and come back as None."""
    pairs = tuple(
        AlignedPair(
            ref=_entry_from(item["ref"], REF_GAP_TOKEN),
            det=_entry_from(item["det"], DET_GAP_TOKEN),
            label=ComplianceLabel(item["label"]),
        )
        for item in raw["pairs"]
    )
    mu = Fraction(raw["mu_exact"]) if "mu_exact" in raw else match_ratio(pairs)
    return AlignmentOutcome(pairs=pairs, mu=mu, score=int(raw.get("score", 0)))
