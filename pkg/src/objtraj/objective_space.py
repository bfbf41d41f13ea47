"""Loss-weight space: anchor objective sets and the one-parameter trajectory.

An objective is a weighted sum of seven basis losses: one reconstruction
term, one adversarial term, and five perceptual terms tied to feature
levels of increasing abstraction. The trajectory maps a scalar t in [0, 1]
onto such a weight vector, starting at the purely distortion-oriented
objective (t=0) and ending at the full perceptual objective (t=1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

PERCEPTUAL_LEVELS = ("V12", "V22", "V34", "V44", "V54")
N_LEVELS = len(PERCEPTUAL_LEVELS)

# Anchor constants shared by every GAN-trained anchor objective.
ANCHOR_REC_WEIGHT = 1e-2
ANCHOR_ADV_WEIGHT = 5e-3


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weight vector (rec, adv, per[5]) for the combined training objective."""

    rec: float
    adv: float
    per: tuple[float, float, float, float, float]

    def __post_init__(self):
        if len(self.per) != N_LEVELS:
            raise DomainError(f"per_weights must have {N_LEVELS} entries, got {len(self.per)}")
        object.__setattr__(self, "per", tuple(float(p) for p in self.per))
        object.__setattr__(self, "rec", float(self.rec))
        object.__setattr__(self, "adv", float(self.adv))

    def as_vector(self) -> np.ndarray:
        """7-vector in the order (rec, adv, V12, V22, V34, V44, V54)."""
        return np.array([self.rec, self.adv, *self.per], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "ObjectiveWeights":
        vec = [float(v) for v in vec]
        if len(vec) != 2 + N_LEVELS:
            raise DomainError(f"weight vector must have {2 + N_LEVELS} entries, got {len(vec)}")
        return cls(rec=vec[0], adv=vec[1], per=tuple(vec[2:]))


def validate_weights(w: ObjectiveWeights) -> list[str]:
    """Return the list of violated weight invariants (empty if valid)."""
    violations = []
    vec = w.as_vector()
    if not np.all(np.isfinite(vec)):
        violations.append("non-finite component")
    if np.any(vec < 0):
        violations.append("negative component")
    per_sum = float(np.sum(w.per))
    if np.isfinite(per_sum) and per_sum > 0 and abs(per_sum - 1.0) > 1e-9:
        violations.append("per_weights neither all-zero nor L1-normalized")
    return violations


def set_b_anchor(level: int) -> ObjectiveWeights:
    """Cumulative anchor: equal weight 1/k on the first k perceptual levels.

    Level 0 is the distortion-only anchor (no perceptual or adversarial term).
    """
    if level not in range(N_LEVELS):
        raise DomainError(f"set-B anchor level must be in 0..4, got {level}")
    if level == 0:
        return ObjectiveWeights(rec=ANCHOR_REC_WEIGHT, adv=0.0, per=(0.0,) * N_LEVELS)
    per = tuple(1.0 / level if i < level else 0.0 for i in range(N_LEVELS))
    return ObjectiveWeights(rec=ANCHOR_REC_WEIGHT, adv=ANCHOR_ADV_WEIGHT, per=per)


def set_a_anchor(level: int) -> ObjectiveWeights:
    """One-hot anchor: full weight on a single perceptual level (0 = none)."""
    if level not in range(N_LEVELS + 1):
        raise DomainError(f"set-A anchor level must be in 0..5, got {level}")
    if level == 0:
        return ObjectiveWeights(rec=ANCHOR_REC_WEIGHT, adv=0.0, per=(0.0,) * N_LEVELS)
    per = tuple(1.0 if i == level - 1 else 0.0 for i in range(N_LEVELS))
    return ObjectiveWeights(rec=ANCHOR_REC_WEIGHT, adv=ANCHOR_ADV_WEIGHT, per=per)


@dataclass(frozen=True)
class ObjectiveAnchorSet:
    label: str  # "A" | "B"
    anchors: tuple[ObjectiveWeights, ...]


def anchor_set(label: str) -> ObjectiveAnchorSet:
    if label == "A":
        return ObjectiveAnchorSet("A", tuple(set_a_anchor(k) for k in range(N_LEVELS + 1)))
    if label == "B":
        return ObjectiveAnchorSet("B", tuple(set_b_anchor(k) for k in range(N_LEVELS)))
    raise DomainError(f"unknown anchor set label {label!r}")


@dataclass(frozen=True)
class ObjectiveTrajectory:
    """Piecewise trajectory through weight space, declared by its anchors.

    Perceptual weights are interpolated piecewise-linearly between the
    anchor rows; the reconstruction and adversarial weights follow linear
    ramps between their t=0 and t=1 values. Evaluated weights decompose as
    alpha * f(t) + beta with constant scaling/offset vectors alpha, beta.
    """

    anchor_ts: tuple[float, ...]
    anchor_pers: tuple[tuple[float, ...], ...]
    rec_ramp: tuple[float, float] = (2e-2, 1e-2)
    adv_ramp: tuple[float, float] = (0.0, ANCHOR_ADV_WEIGHT)
    preset: str = "custom"

    def __post_init__(self):
        ts = tuple(float(t) for t in self.anchor_ts)
        if len(ts) < 2 or ts[0] != 0.0 or ts[-1] != 1.0:
            raise DomainError("anchor_ts must start at 0.0 and end at 1.0")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError("anchor_ts must be strictly increasing")
        pers = tuple(tuple(float(p) for p in row) for row in self.anchor_pers)
        if len(pers) != len(ts):
            raise DomainError("one per-weight row required per anchor t")
        if any(len(row) != N_LEVELS for row in pers):
            raise DomainError(f"per-weight rows must have {N_LEVELS} entries")
        if any(p < 0 for row in pers for p in row):
            raise DomainError("anchor per-weights must be nonnegative")
        object.__setattr__(self, "anchor_ts", ts)
        object.__setattr__(self, "anchor_pers", pers)

    # -- alpha * f(t) + beta decomposition ---------------------------------

    @property
    def alpha(self) -> np.ndarray:
        """Scaling vector: (rec_span, 1, 1, 1, 1, 1, 1)."""
        r0, r1 = self.rec_ramp
        return np.array([r0 - r1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])

    @property
    def beta(self) -> np.ndarray:
        """Offset vector: (rec endpoint at t=1, 0, ..., 0)."""
        return np.array([self.rec_ramp[1], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

    def f_rec(self, t: float) -> float:
        return 1.0 - float(t)

    def f_adv(self, t: float) -> float:
        a0, a1 = self.adv_ramp
        return a0 + (a1 - a0) * float(t)

    def f_per(self, t: float) -> np.ndarray:
        ts = np.asarray(self.anchor_ts)
        rows = np.asarray(self.anchor_pers)
        return np.array([np.interp(t, ts, rows[:, l]) for l in range(N_LEVELS)])

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, t: float) -> ObjectiveWeights:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"trajectory parameter t must be in [0, 1], got {t}")
        f = np.concatenate(([self.f_rec(t)], [self.f_adv(t)], self.f_per(t)))
        vec = self.alpha * f + self.beta
        return ObjectiveWeights(rec=vec[0], adv=vec[1], per=tuple(vec[2:]))

    def lipschitz_bound(self) -> float:
        """Max componentwise slope of the evaluated weights over [0, 1]."""
        slopes = [abs(self.rec_ramp[1] - self.rec_ramp[0]), abs(self.adv_ramp[1] - self.adv_ramp[0])]
        ts = self.anchor_ts
        for a, b, ta, tb in zip(self.anchor_pers, self.anchor_pers[1:], ts, ts[1:]):
            slopes.extend(abs(pb - pa) / (tb - ta) for pa, pb in zip(a, b))
        return max(slopes)

    def to_config(self) -> dict:
        """Declarative form, suitable for the run config and manifests."""
        return {
            "preset": self.preset,
            "anchors": [
                {"t": t, "per": list(row)} for t, row in zip(self.anchor_ts, self.anchor_pers)
            ],
            "rec_ramp": list(self.rec_ramp),
            "adv_ramp": list(self.adv_ramp),
        }


def trajectory_eval(traj: ObjectiveTrajectory, t: float) -> ObjectiveWeights:
    return traj.evaluate(t)


def trajectory_p1234() -> ObjectiveTrajectory:
    """Default trajectory through the five cumulative anchors, evenly spaced."""
    anchors = [set_b_anchor(k) for k in range(N_LEVELS)]
    return ObjectiveTrajectory(
        anchor_ts=(0.0, 0.25, 0.5, 0.75, 1.0),
        anchor_pers=tuple(a.per for a in anchors),
        preset="p1234",
    )


def trajectory_p2() -> ObjectiveTrajectory:
    """Single-level alternative: only the V22 perceptual term ramps in."""
    return ObjectiveTrajectory(
        anchor_ts=(0.0, 1.0),
        anchor_pers=((0.0,) * N_LEVELS, (0.0, 1.0, 0.0, 0.0, 0.0)),
        preset="p2",
    )


def trajectory_from_config(cfg: dict) -> ObjectiveTrajectory:
    """Build a trajectory from the `trajectory:` config section."""
    preset = cfg.get("preset", "p1234")
    if preset == "p1234":
        base = trajectory_p1234()
    elif preset == "p2":
        base = trajectory_p2()
    elif preset == "custom":
        anchors = cfg.get("anchors")
        if not anchors:
            raise DomainError("custom trajectory requires an anchors list")
        base = ObjectiveTrajectory(
            anchor_ts=tuple(a["t"] for a in anchors),
            anchor_pers=tuple(tuple(a["per"]) for a in anchors),
            preset="custom",
        )
    else:
        raise DomainError(f"unknown trajectory preset {preset!r}")
    rec_ramp = tuple(cfg.get("rec_ramp", base.rec_ramp))
    adv_ramp = tuple(cfg.get("adv_ramp", base.adv_ramp))
    return ObjectiveTrajectory(
        anchor_ts=base.anchor_ts,
        anchor_pers=base.anchor_pers,
        rec_ramp=rec_ramp,
        adv_ramp=adv_ramp,
        preset=base.preset,
    )


@dataclass(frozen=True)
class ObjectiveMap:
    """LR-sized grid of trajectory parameters conditioning the generator."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"objective map must be a nonempty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("objective map contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("objective map values must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def constant_map(t: float, h: int, w: int) -> ObjectiveMap:
    """Uniform objective map: every location carries the same t."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must be in [0, 1], got {t}")
    if h < 1 or w < 1:
        raise DomainError(f"map dimensions must be positive, got {h}x{w}")
    return ObjectiveMap(np.full((h, w), t, dtype=np.float32))
