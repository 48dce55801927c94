"""Demographic attribute schema: categories, sampling, and soft encodings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ETHNICITIES = (
    "East Asian",
    "Southeast Asian",
    "South Asian",
    "Middle Eastern",
    "Caucasian",
    "Germanic",
    "Celtic",
    "Slavic",
    "Romance",
    "Australian",
    "Native American",
    "Aboriginal",
    "Pacific Islander",
    "African",
)
GENDERS = ("male", "female", "unisex")
AGE_GROUPS = (15, 18, 20, 22, 25, 28, 30, 35, 40, 45, 55, 65, 75)

GENDER_PROBS = (0.45, 0.45, 0.10)

N_ETHNICITY = len(ETHNICITIES)
N_GENDER = len(GENDERS)
N_AGE = len(AGE_GROUPS)


@dataclass(frozen=True)
class AttributeLabel:
    """Categorical (ethnicity, gender, age-group) triple."""

    ethnicity: int
    gender: int
    age_group: int

    def __post_init__(self):
        if not 0 <= self.ethnicity < N_ETHNICITY:
            raise ValueError(f"ethnicity index out of range: {self.ethnicity}")
        if not 0 <= self.gender < N_GENDER:
            raise ValueError(f"gender index out of range: {self.gender}")
        if not 0 <= self.age_group < N_AGE:
            raise ValueError(f"age_group index out of range: {self.age_group}")

    def describe(self) -> str:
        return (f"{ETHNICITIES[self.ethnicity]} {GENDERS[self.gender]} "
                f"age {AGE_GROUPS[self.age_group]}")


class SoftLabel:
    """Convex mixture over each attribute's categories.

    Sub-vectors are non-negative and sum to 1, which keeps interpolated
    labels valid inputs for the conditional generator.
    """

    __slots__ = ("ethnicity", "gender", "age")

    def __init__(self, ethnicity, gender, age):
        self.ethnicity = _simplex(np.asarray(ethnicity, dtype=np.float64), N_ETHNICITY, "ethnicity")
        self.gender = _simplex(np.asarray(gender, dtype=np.float64), N_GENDER, "gender")
        self.age = _simplex(np.asarray(age, dtype=np.float64), N_AGE, "age")

    def vector(self) -> np.ndarray:
        """Concatenated (14 + 3 + 13)-dim conditioning vector."""
        return np.concatenate([self.ethnicity, self.gender, self.age])

    def argmax(self) -> AttributeLabel:
        return AttributeLabel(int(np.argmax(self.ethnicity)),
                              int(np.argmax(self.gender)),
                              int(np.argmax(self.age)))

    def __eq__(self, other):
        return (isinstance(other, SoftLabel)
                and np.array_equal(self.ethnicity, other.ethnicity)
                and np.array_equal(self.gender, other.gender)
                and np.array_equal(self.age, other.age))

    def __repr__(self):
        return f"SoftLabel({self.argmax().describe()!r})"


LABEL_DIM = N_ETHNICITY + N_GENDER + N_AGE


def _simplex(v: np.ndarray, n: int, name: str) -> np.ndarray:
    if v.shape != (n,):
        raise ValueError(f"{name} sub-vector must have shape ({n},), got {v.shape}")
    if np.any(v < 0):
        raise ValueError(f"{name} sub-vector must be non-negative")
    s = v.sum()
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"{name} sub-vector must sum to 1, got {s}")
    v = v.copy()
    v.flags.writeable = False
    return v


def sample_attributes(rng: np.random.Generator) -> AttributeLabel:
    """Draw one label: ethnicity and age uniform, gender 45/45/10."""
    e = int(rng.integers(N_ETHNICITY))
    g = int(rng.choice(N_GENDER, p=GENDER_PROBS))
    a = int(rng.integers(N_AGE))
    return AttributeLabel(e, g, a)


def encode_label(label: AttributeLabel) -> SoftLabel:
    """One-hot soft encoding of a pure categorical label."""
    e = np.zeros(N_ETHNICITY)
    g = np.zeros(N_GENDER)
    a = np.zeros(N_AGE)
    e[label.ethnicity] = 1.0
    g[label.gender] = 1.0
    a[label.age_group] = 1.0
    return SoftLabel(e, g, a)


def mix_labels(a: SoftLabel, b: SoftLabel, t: float) -> SoftLabel:
    """Convex combination (1-t)*a + t*b, valid for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1], got {t}")
    return SoftLabel((1 - t) * a.ethnicity + t * b.ethnicity,
                     (1 - t) * a.gender + t * b.gender,
                     (1 - t) * a.age + t * b.age)


def soft_from_vector(vec: np.ndarray) -> SoftLabel:
    """Split a concatenated conditioning vector back into a SoftLabel."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (LABEL_DIM,):
        raise ValueError(f"expected {LABEL_DIM}-dim vector, got shape {vec.shape}")
    return SoftLabel(vec[:N_ETHNICITY],
                     vec[N_ETHNICITY:N_ETHNICITY + N_GENDER],
                     vec[N_ETHNICITY + N_GENDER:])
