"""Analytics over justified pairwise human votes.

Each evaluation item carries exactly five A/B votes, one per rater,
and each rater must name at least one justification tag. Items are
classed by agreement: split (3|2), partial (4|1), complete (5|0).

Inter-rater reliability uses Fleiss' kappa for n = 5 raters over two
categories: per-item agreement P_i = sum_j n_ij (n_ij - 1) / (n (n-1)),
chance agreement from pooled category proportions, and
kappa = (mean P_i - P_e) / (1 - P_e). Five binary votes give
P_i = 0.4 / 0.6 / 1.0 for split / partial / complete items, so with
balanced categories kappa runs from -0.2 (all split) to 1.0 (all
complete); the simulated curve sweeps the complete fraction between
those endpoints.

Vote files are CSV with header ``item_id,rater,choice,reasons`` where
``reasons`` is a ``;``-separated tag list; files are strict UTF-8 and
unknown tags are a load error.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from collections import Counter
from dataclasses import dataclass

NUM_RATERS = 5

QUALITY_TAGS = (
    "pixel_sharpness",
    "motion_smoothness",
    "object_consistency",
    "visual_concept",
    "amount_of_motion",
)
FAITHFULNESS_TAGS = ("spatial_alignment", "temporal_alignment")
ALL_TAGS = frozenset(QUALITY_TAGS + FAITHFULNESS_TAGS)

CSV_FIELDS = ("item_id", "rater", "choice", "reasons")


class VoteFormatError(ValueError):
    """Raised for malformed vote records or files."""


class AgreementClass(enum.Enum):
    SPLIT = "split"      # 3|2
    PARTIAL = "partial"  # 4|1
    COMPLETE = "complete"  # 5|0


@dataclass(frozen=True)
class VoteRecord:
    item_id: str
    votes: tuple[str, ...]            # exactly five of "A"/"B"
    reasons: tuple[tuple[str, ...], ...]  # per-rater non-empty tag tuples

    def __post_init__(self):
        if len(self.votes) != NUM_RATERS:
            raise VoteFormatError(f"{self.item_id}: need exactly {NUM_RATERS} votes, got {len(self.votes)}")
        if any(v not in ("A", "B") for v in self.votes):
            raise VoteFormatError(f"{self.item_id}: votes must be 'A' or 'B', got {self.votes}")
        if len(self.reasons) != NUM_RATERS:
            raise VoteFormatError(f"{self.item_id}: need one reason list per rater")
        for tags in self.reasons:
            if not tags:
                raise VoteFormatError(f"{self.item_id}: every rater must justify their choice")
            unknown = [t for t in tags if t not in ALL_TAGS]
            if unknown:
                raise VoteFormatError(f"{self.item_id}: unknown tags {unknown}")

    def count(self, choice: str) -> int:
        return sum(1 for v in self.votes if v == choice)


def majority_winner(rec: VoteRecord) -> str:
    """Winner by count; five voters over two options cannot tie."""
    return "A" if rec.count("A") >= 3 else "B"


def classify_agreement(rec: VoteRecord) -> AgreementClass:
    majority = max(rec.count("A"), rec.count("B"))
    if majority == 5:
        return AgreementClass.COMPLETE
    if majority == 4:
        return AgreementClass.PARTIAL
    return AgreementClass.SPLIT


def win_rate(records: list[VoteRecord], choice: str = "A") -> float:
    """Fraction of items whose majority winner is ``choice``."""
    if not records:
        raise VoteFormatError("no records")
    wins = sum(1 for rec in records if majority_winner(rec) == choice)
    return wins / len(records)


def fleiss_kappa(records: list[VoteRecord]) -> float:
    """Fleiss' kappa over two categories; NaN when chance agreement is 1.

    The degenerate case (every vote in one category across all items)
    leaves kappa undefined and returns NaN rather than raising.
    """
    if not records:
        raise VoteFormatError("no records")
    n = NUM_RATERS
    p_bar = 0.0
    total_a = 0
    for rec in records:
        a = rec.count("A")
        b = n - a
        p_bar += (a * (a - 1) + b * (b - 1)) / (n * (n - 1))
        total_a += a
    p_bar /= len(records)
    p_a = total_a / (len(records) * n)
    p_e = p_a * p_a + (1.0 - p_a) * (1.0 - p_a)
    if p_e == 1.0:
        return math.nan
    return (p_bar - p_e) / (1.0 - p_e)


def _balanced_records(count: int, votes_a: int, prefix: str, start: int) -> list[VoteRecord]:
    """``count`` items with the given A-vote count, half favoring each label."""
    records = []
    half = count // 2
    for i in range(count):
        a_votes = votes_a if i < half else NUM_RATERS - votes_a
        votes = tuple("A" if j < a_votes else "B" for j in range(NUM_RATERS))
        reasons = tuple(("pixel_sharpness",) for _ in range(NUM_RATERS))
        records.append(VoteRecord(f"{prefix}{start + i:04d}", votes, reasons))
    return records


def simulate_kappa_curve(
    num_items: int = 304,
    replacement: AgreementClass = AgreementClass.SPLIT,
    fractions: list[float] | None = None,
) -> list[tuple[float, float]]:
    """Kappa as complete-agreement items displace a weaker class.

    For each fraction f, builds round(f * num_items) complete items and
    fills the remainder with the replacement class (split or partial),
    assigning favored labels as evenly as possible, then measures kappa.
    """
    if replacement is AgreementClass.COMPLETE:
        raise ValueError("replacement class must be SPLIT or PARTIAL")
    if fractions is None:
        fractions = [i / 10 for i in range(11)]
    if sorted(fractions) != list(fractions):
        raise ValueError("fractions must be sorted ascending")
    votes_a = 3 if replacement is AgreementClass.SPLIT else 4
    curve = []
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fraction {f} outside [0, 1]")
        n_complete = round(f * num_items)
        records = _balanced_records(n_complete, NUM_RATERS, "c", 0)
        records += _balanced_records(num_items - n_complete, votes_a, "r", n_complete)
        curve.append((f, fleiss_kappa(records)))
    return curve


def reason_distribution(records: list[VoteRecord], winner_filter: str) -> dict[str, float]:
    """Per-tag percentage of winning items citing the tag.

    An item counts once per tag if any rater on the winning side chose
    it; multi-select means percentages may sum above 100. Items whose
    winner differs from the filter are ignored; no matching items gives
    an empty map.
    """
    if not records:
        raise VoteFormatError("no records")
    if winner_filter not in ("A", "B"):
        raise VoteFormatError(f"winner filter must be 'A' or 'B', got {winner_filter!r}")
    counts: Counter[str] = Counter()
    matched = 0
    for rec in records:
        if majority_winner(rec) != winner_filter:
            continue
        matched += 1
        cited = set()
        for vote, tags in zip(rec.votes, rec.reasons):
            if vote == winner_filter:
                cited.update(tags)
        counts.update(cited)
    if matched == 0:
        return {}
    return {tag: 100.0 * counts[tag] / matched for tag in sorted(counts)}


def agreement_histogram(records: list[VoteRecord]) -> dict[AgreementClass, int]:
    hist = {cls: 0 for cls in AgreementClass}
    for rec in records:
        hist[classify_agreement(rec)] += 1
    return hist


def load_votes_csv(path: str | os.PathLike) -> list[VoteRecord]:
    """Parse a vote CSV, reporting malformed rows with line numbers."""
    rows: dict[str, list[tuple[int, str, str, tuple[str, ...]]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_FIELDS:
            raise VoteFormatError(f"{path}: header must be {','.join(CSV_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            item = row.get("item_id") or ""
            choice = (row.get("choice") or "").strip()
            rater = (row.get("rater") or "").strip()
            if not item or not rater:
                raise VoteFormatError(f"{path}:{lineno}: missing item_id or rater")
            if choice not in ("A", "B"):
                raise VoteFormatError(f"{path}:{lineno}: choice must be A or B, got {choice!r}")
            tags = tuple(t for t in (row.get("reasons") or "").split(";") if t)
            if not tags:
                raise VoteFormatError(f"{path}:{lineno}: empty reasons (justification required)")
            unknown = [t for t in tags if t not in ALL_TAGS]
            if unknown:
                raise VoteFormatError(f"{path}:{lineno}: unknown tags {unknown}")
            if item not in rows:
                rows[item] = []
                order.append(item)
            rows[item].append((lineno, rater, choice, tags))
    records = []
    for item in order:
        entries = rows[item]
        if len(entries) != NUM_RATERS:
            lines = ", ".join(str(e[0]) for e in entries)
            raise VoteFormatError(f"{path}: item {item!r} has {len(entries)} rows (lines {lines}), need {NUM_RATERS}")
        raters = [e[1] for e in entries]
        if len(set(raters)) != NUM_RATERS:
            raise VoteFormatError(f"{path}: item {item!r} repeats a rater id")
        records.append(
            VoteRecord(
                item_id=item,
                votes=tuple(e[2] for e in entries),
                reasons=tuple(e[3] for e in entries),
            )
        )
    return records


def save_votes_csv(path: str | os.PathLike, records: list[VoteRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in records:
            for idx, (vote, tags) in enumerate(zip(rec.votes, rec.reasons), start=1):
                writer.writerow([rec.item_id, f"r{idx}", vote, ";".join(tags)])
