"""Seeded synthetic daily batches from a class-conditional Bernoulli model.

Random stream: numpy ``PCG64`` seeded with ``SeedSequence([seed, day_index])``.
Per day, draws happen in this order:

1. labels: ``rng.random(n) < prior_malicious``
2. triggers: one ``rng.random((n, m_count))`` matrix, compared against
   ``a_m`` for MALICIOUS rows and ``b_m`` for BENIGN rows
3. correlated pairs, in listed order: ``rng.random(n) < rho`` selects the
   rows where BIC j copies BIC i

Sample ids are ``sha256("{seed}:{day_index}:{ordinal}")`` in hex.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .samples import DailyBatch, FeatureSpace, LabeledSample, save_daily_file, write_meta

DEFAULT_START = dt.date(2019, 2, 1)
GENERATOR_FILE = "generator.json"


@dataclass(frozen=True)
class GeneratorSpec:
    m_count: int
    prior_malicious: float
    trigger_malicious: tuple[float, ...]  # a_m = p(x_m = 1 | MALICIOUS)
    trigger_benign: tuple[float, ...]  # b_m = p(x_m = 1 | BENIGN)
    samples_per_day: int = 5000
    days: int = 30
    seed: int = 0
    start_date: dt.date = DEFAULT_START
    correlated_pairs: tuple[tuple[int, int, float], ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "trigger_malicious", tuple(float(v) for v in self.trigger_malicious))
        object.__setattr__(self, "trigger_benign", tuple(float(v) for v in self.trigger_benign))
        object.__setattr__(
            self, "correlated_pairs", tuple((int(i), int(j), float(r)) for i, j, r in self.correlated_pairs)
        )
        FeatureSpace(self.m_count)
        if not 0 < self.prior_malicious < 1:
            raise ValueError("prior_malicious must lie in (0, 1)")
        for name in ("trigger_malicious", "trigger_benign"):
            vec = getattr(self, name)
            if len(vec) != self.m_count:
                raise ValueError(f"{name} must have length m_count={self.m_count}")
            if any(not 0.0 <= v <= 1.0 for v in vec):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if self.samples_per_day < 0:
            raise ValueError("samples_per_day must be >= 0")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for i, j, rho in self.correlated_pairs:
            if not (0 <= i < self.m_count and 0 <= j < self.m_count and i != j):
                raise ValueError(f"invalid correlated pair ({i}, {j})")
            if not 0.0 <= rho <= 1.0:
                raise ValueError("correlation rho must lie in [0, 1]")

    @property
    def feature_space(self) -> FeatureSpace:
        return FeatureSpace(self.m_count)

    def to_json(self) -> str:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["correlated_pairs"] = [list(p) for p in self.correlated_pairs]
        return json.dumps(d, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        d = json.loads(text)
        d["start_date"] = dt.date.fromisoformat(d["start_date"])
        d["correlated_pairs"] = tuple(tuple(p) for p in d.get("correlated_pairs", ()))
        return cls(**d)


def default_profile(
    m_count: int = 256,
    prior_malicious: float = 0.32,
    samples_per_day: int = 5000,
    days: int = 30,
    seed: int = 0,
) -> GeneratorSpec:
    """Desk-scale profile loosely shaped like sandbox BIC data.

    The trigger probabilities are drawn from ``seed``: about 15% of the BICs
    fire almost only on malware, 10% lean benign, the rest are weakly
    informative background behaviour; a sample triggers ~4.5 BICs on average.
    BICs 0 and 1 are planted with analytic precisions 0.995 and 0.985 (at the
    given prior) so the 0.99 threshold falls between them.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2**32 - 1])))
    kind = rng.random(m_count)
    a = rng.uniform(0.002, 0.03, m_count)
    b = rng.uniform(0.002, 0.03, m_count)
    mal = kind < 0.15
    ben = (kind >= 0.15) & (kind < 0.25)
    a[mal] = rng.uniform(0.005, 0.06, mal.sum())
    b[mal] = rng.uniform(0.0, 0.0006, mal.sum())
    a[ben] = rng.uniform(0.0, 0.004, ben.sum())
    b[ben] = rng.uniform(0.01, 0.08, ben.sum())
    if m_count >= 2:
        a[0], b[0] = planted_rates(0.995, 0.25, prior_malicious)
        a[1], b[1] = planted_rates(0.985, 0.25, prior_malicious)
    return GeneratorSpec(
        m_count=m_count,
        prior_malicious=prior_malicious,
        trigger_malicious=tuple(a.tolist()),
        trigger_benign=tuple(b.tolist()),
        samples_per_day=samples_per_day,
        days=days,
        seed=seed,
    )


def planted_rates(precision: float, malicious_rate: float, prior: float) -> tuple[float, float]:
    """(a, b) giving a BIC the requested analytic precision."""
    # precision = pi a / (pi a + (1 - pi) b)  =>  b = pi a (1 - P) / ((1 - pi) P)
    b = prior * malicious_rate * (1.0 - precision) / ((1.0 - prior) * precision)
    return malicious_rate, b


def analytic_precision(spec: GeneratorSpec, m: int) -> float:
    """Population precision of BIC m: P(MALICIOUS | x_m = 1)."""
    pi = spec.prior_malicious
    a, b = spec.trigger_malicious[m], spec.trigger_benign[m]
    den = pi * a + (1.0 - pi) * b
    if den <= 0:
        raise ValueError(f"BIC {m} never triggers under this generator")
    return pi * a / den


def sample_id(seed: int, day_index: int, ordinal: int) -> str:
    return hashlib.sha256(f"{seed}:{day_index}:{ordinal}".encode()).hexdigest()


def day_rng(seed: int, day_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, day_index])))


def generate_day(spec: GeneratorSpec, day_index: int) -> DailyBatch:
    rng = day_rng(spec.seed, day_index)
    n = spec.samples_per_day
    labels = rng.random(n) < spec.prior_malicious
    a = np.asarray(spec.trigger_malicious)
    b = np.asarray(spec.trigger_benign)
    x = rng.random((n, spec.m_count)) < np.where(labels[:, None], a, b)
    for i, j, rho in spec.correlated_pairs:
        copy = rng.random(n) < rho
        x[copy, j] = x[copy, i]
    samples = tuple(
        LabeledSample(sample_id(spec.seed, day_index, k), tuple(np.flatnonzero(x[k]).tolist()), int(labels[k]))
        for k in range(n)
    )
    return DailyBatch(spec.start_date + dt.timedelta(days=day_index), samples)


def generate(spec: GeneratorSpec):
    for d in range(spec.days):
        yield generate_day(spec, d)


def write_dataset(spec: GeneratorSpec, out_dir: str | Path) -> list[Path]:
    """Write daily files, meta.json and generator.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_meta(out, spec.feature_space)
    (out / GENERATOR_FILE).write_text(spec.to_json(), encoding="utf-8")
    return [save_daily_file(out, batch) for batch in generate(spec)]
