"""Training-run logs: CSV ingest, outlier filtering and the held-out scenario splits.

CSV layout (header mandatory)::

    n_params,pt_tokens_b,cpt_tokens_b,domain_id,loss[,source_tag]

Blank lines are skipped and lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import DegenerateError, EmptyInputError, ParseError

COLUMNS = ("n_params", "pt_tokens_b", "cpt_tokens_b", "domain_id", "loss")
OPTIONAL_COLUMNS = ("source_tag",)


@dataclass(frozen=True)
class RunRecord:
    n_params: int
    pt_tokens: float
    cpt_tokens: float
    domain_id: int
    loss: float
    source_tag: str = ""

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if self.n_params <= 0:
            out.append(("n_params", "must be > 0"))
        if self.pt_tokens < 0:
            out.append(("pt_tokens_b", "must be >= 0"))
        if self.cpt_tokens < 0:
            out.append(("cpt_tokens_b", "must be >= 0"))
        if self.pt_tokens + self.cpt_tokens <= 0:
            out.append(("pt_tokens_b", "pt_tokens + cpt_tokens must be > 0"))
        if self.domain_id < 0:
            out.append(("domain_id", "must be >= 0"))
        if not (math.isfinite(self.loss) and self.loss > 0):
            out.append(("loss", "must be finite and > 0"))
        return out


@dataclass(frozen=True)
class Dataset:
    records: tuple[RunRecord, ...]
    n_domains: int
    domain_weights: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.domain_weights:
            w = (1.0 / self.n_domains,) * self.n_domains if self.n_domains else ()
            object.__setattr__(self, "domain_weights", w)
        else:
            w = np.asarray(self.domain_weights, dtype=float)
            if len(w) != self.n_domains or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("domain weights must be nonnegative, one per domain, not all zero")
            object.__setattr__(self, "domain_weights", tuple(float(x) for x in w / w.sum()))
        for r in self.records:
            if r.domain_id >= self.n_domains:
                raise ValueError(f"domain_id {r.domain_id} out of range for K={self.n_domains}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, records: Iterable[RunRecord]) -> "Dataset":
        return Dataset(tuple(records), self.n_domains, self.domain_weights)

    def arrays(self):
        """Columns as float arrays ``(N, D, D_k, loss)``."""
        if not self.records:
            e = np.empty(0)
            return e, e, e, e
        a = np.array([(r.n_params, r.pt_tokens, r.cpt_tokens, r.loss) for r in self.records], dtype=float)
        return a[:, 0], a[:, 1], a[:, 2], a[:, 3]

    @property
    def sizes(self) -> list[int]:
        return sorted({r.n_params for r in self.records})


def _parse_number(text, row, column, integer=False):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, column, f"not a number: {text!r}") from None
    if integer:
        if not value.is_integer():
            raise ParseError(row, column, f"expected an integer, got {text!r}")
        return int(value)
    return value


def parse_runs(source: TextIO | str, n_domains: int | None = None, weights=None) -> Dataset:
    """Parse run logs; rows violating a record invariant raise :class:`ParseError`.

    A header-only input yields an empty dataset with ``n_domains == 0`` unless
    ``n_domains`` is given.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    lines = [
        (i, line) for i, line in enumerate(source, start=1) if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise EmptyInputError("no header row: input is empty")
    header_row, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    if tuple(header[:5]) != COLUMNS or len(header) > 6 or (len(header) == 6 and header[5] != "source_tag"):
        raise ParseError(header_row, None, f"header must be {','.join(COLUMNS)}[,source_tag]; got {header_line.strip()!r}")

    records = []
    for row, line in lines[1:]:
        cells = [c.strip() for c in next(csv.reader([line]))]
        if len(cells) not in (5, 6):
            raise ParseError(row, None, f"expected 5 or 6 fields, got {len(cells)}")
        rec = RunRecord(
            n_params=_parse_number(cells[0], row, "n_params", integer=True),
            pt_tokens=_parse_number(cells[1], row, "pt_tokens_b"),
            cpt_tokens=_parse_number(cells[2], row, "cpt_tokens_b"),
            domain_id=_parse_number(cells[3], row, "domain_id", integer=True),
            loss=_parse_number(cells[4], row, "loss"),
            source_tag=cells[5] if len(cells) == 6 else "",
        )
        bad = rec.violations()
        if bad:
            column, reason = bad[0]
            raise ParseError(row, column, reason)
        records.append(rec)

    inferred = 1 + max((r.domain_id for r in records), default=-1)
    k = inferred if n_domains is None else n_domains
    if k < inferred:
        raise ParseError(lines[-1][0], "domain_id", f"domain_id {inferred - 1} exceeds K={k}")
    return Dataset(tuple(records), k, tuple(weights) if weights is not None else ())


def _fmt(x: float) -> str:
    return repr(float(x))


def to_csv(ds: Dataset, out: TextIO | None = None) -> str:
    """Canonical CSV serialization; parsing it back reproduces ``ds``."""
    buf = io.StringIO()
    buf.write(",".join(COLUMNS + OPTIONAL_COLUMNS) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for r in ds.records:
        writer.writerow([r.n_params, _fmt(r.pt_tokens), _fmt(r.cpt_tokens), r.domain_id, _fmt(r.loss), r.source_tag])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def filter_outliers(ds: Dataset, lo: float = 0.5, hi: float = 4.0) -> tuple[Dataset, int]:
    """Drop runs with loss above ``hi`` or below ``lo``; bounds themselves are kept.

    Returns the filtered dataset and the number of removed runs.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    kept = [r for r in ds.records if lo <= r.loss <= hi]
    return ds.subset(kept), len(ds) - len(kept)


@dataclass(frozen=True)
class ScenarioSplit:
    scenario: int
    train: Dataset
    test: Dataset
    thresholds: dict


def scenario_split(ds: Dataset, scenario: int, size_cutoff: int) -> ScenarioSplit:
    """Train/test partition for held-out evaluation.

    1. train on models up to ``size_cutoff``; test on larger ones.
    2. additionally restrict training to pretraining tokens at or below the median.
    3. additionally restrict training to continued-pretraining tokens at or below the median.

    Everything not in train is test. Medians are taken by rank over the full dataset.
    """
    if scenario not in (1, 2, 3):
        raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")
    if not ds.records:
        raise DegenerateError("cannot split an empty dataset")
    if size_cutoff not in ds.sizes:
        raise DegenerateError(f"size cutoff {size_cutoff} is not among the model sizes {ds.sizes}")
    _, D, Dk, _ = ds.arrays()
    d_median = float(np.median(D))
    dk_median = float(np.median(Dk))

    def in_train(r: RunRecord) -> bool:
        if r.n_params > size_cutoff:
            return False
        if scenario >= 2 and r.pt_tokens > d_median:
            return False
        if scenario >= 3 and r.cpt_tokens > dk_median:
            return False
        return True

    train = [r for r in ds.records if in_train(r)]
    test = [r for r in ds.records if not in_train(r)]
    if not train or not test:
        raise DegenerateError(
            f"scenario {scenario} with cutoff {size_cutoff} leaves {len(train)} train / {len(test)} test runs"
        )
    thresholds = {"size_cutoff": size_cutoff, "d_median": d_median, "dk_median": dk_median}
    return ScenarioSplit(scenario, ds.subset(train), ds.subset(test), thresholds)
