"""
Visual-diet curricula - staged schedules, baseline variants and training plans
"""
import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

from ops.errors import RegistryError, ScheduleError
from ops.seeding import numpy_rng

logger = logging.getLogger(__name__)

# Saturation interval that means "full color" (StageSpec needs lo < hi)
FULL_COLOR = (1.0 - 1e-6, 1.0)

SATURATION_BANDS = [
    (0.20, 0.36),
    (0.36, 0.52),
    (0.52, 0.68),
    (0.68, 0.84),
    (0.84, 1.0),
]

CDIET_DURATIONS = [10, 7, 6, 5, 2]
CDIET_TEMPERATURES = [0.5, 0.4, 0.3, 0.2, 0.1]

ADIET_DURATIONS = [10, 6, 6, 3, 5]
ADIET_SIGMAS = [4, 3, 2, 1, 0]
ADIET_TEMPERATURES = [0.5, 0.4, 0.3, 0.2, 0.1]

CATDIET_DURATIONS = [10, 6, 1, 5, 1, 2, 3, 2]
CATDIET_SIGMAS = [4, 3, 2, 2, 1, 1, 0, 0]
CATDIET_BANDS = [0, 1, 1, 2, 2, 3, 3, 4]
CATDIET_TEMPERATURES = [0.5, 0.45, 0.4, 0.35, 0.3, 0.2, 0.15, 0.1]

TDIET_TEMPERATURE = 0.1
PHASE2_TEMPERATURE = 0.1

LEARNER_KINDS = ("contrastive", "distillation")
DIETS = ("cdiet", "adiet", "catdiet", "tdiet", "combdiet", "std")
BASELINE_KINDS = ("none", "rev", "shf", "fo", "lo", "nonsmooth")
DERIVABLE_BASELINES = ("rev", "shf", "fo", "lo")


def kernel_for_sigma(sigma: float) -> int:
    """Odd kernel size 6*sigma + 1 (25 for sigma=4, 1 for sigma=0)"""
    return int(round(6 * sigma)) + 1


@dataclass(frozen=True)
class StageSpec:
    """One curriculum stage: image parameters plus contrastive temperature"""

    duration_epochs: int
    blur_sigma: float = 0.0
    kernel_size: int = 1
    saturation_range: Tuple[float, float] = FULL_COLOR
    temperature: float = TDIET_TEMPERATURE

    def __post_init__(self):
        problems = []
        if not isinstance(self.duration_epochs, int) or self.duration_epochs < 1:
            problems.append(f"duration_epochs must be a positive integer, got {self.duration_epochs}")
        if self.blur_sigma < 0:
            problems.append(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            problems.append(f"kernel_size must be odd and positive, got {self.kernel_size}")
        lo, hi = self.saturation_range
        if not 0.0 <= lo < hi <= 1.0:
            problems.append(f"saturation_range must satisfy 0 <= lo < hi <= 1, got {(lo, hi)}")
        if self.temperature <= 0:
            problems.append(f"temperature must be positive, got {self.temperature}")
        if problems:
            raise ScheduleError("; ".join(problems))
        object.__setattr__(self, "saturation_range", (float(lo), float(hi)))

    @property
    def is_identity(self) -> bool:
        sharp = self.kernel_size == 1 or self.blur_sigma == 0
        return sharp and self.saturation_range[0] >= FULL_COLOR[0]

    def image_params(self) -> dict:
        return {
            "sigma": self.blur_sigma,
            "kernel": self.kernel_size,
            "sat_lo": self.saturation_range[0],
            "sat_hi": self.saturation_range[1],
        }

    def to_dict(self) -> dict:
        return {"duration": self.duration_epochs, **self.image_params(), "temperature": self.temperature}

    @classmethod
    def from_dict(cls, row: dict) -> "StageSpec":
        try:
            return cls(
                duration_epochs=int(row["duration"]),
                blur_sigma=float(row.get("sigma", 0.0)),
                kernel_size=int(row.get("kernel", 1)),
                saturation_range=(float(row.get("sat_lo", FULL_COLOR[0])), float(row.get("sat_hi", 1.0))),
                temperature=float(row.get("temperature", TDIET_TEMPERATURE)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ScheduleError(f"Malformed stage row {row!r}: {e}") from e


class StageParams(NamedTuple):
    """Concrete image parameters drawn from a stage"""

    s: float
    sigma: float
    kernel: int


@dataclass(frozen=True)
class DietSchedule:
    """Ordered, contiguous stages covering epochs [0, total_epochs)"""

    name: str
    stages: Tuple[StageSpec, ...]
    total_epochs: int = 0

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise ScheduleError(f"Schedule '{self.name}' has no stages")
        object.__setattr__(self, "stages", stages)
        total = sum(st.duration_epochs for st in stages)
        if self.total_epochs == 0:
            object.__setattr__(self, "total_epochs", total)
        elif total != self.total_epochs:
            raise ScheduleError(
                f"Schedule '{self.name}': stage durations sum to {total}, expected {self.total_epochs}"
            )

    @property
    def pooled(self) -> bool:
        return False

    @property
    def durations(self) -> List[int]:
        return [st.duration_epochs for st in self.stages]

    def boundaries(self) -> List[int]:
        """Cumulative end epoch of every stage (last one equals total_epochs)"""
        ends, acc = [], 0
        for st in self.stages:
            acc += st.duration_epochs
            ends.append(acc)
        return ends

    def stage_index(self, epoch: int) -> int:
        if not 0 <= epoch < self.total_epochs:
            raise IndexError(f"Epoch {epoch} outside [0, {self.total_epochs}) for schedule '{self.name}'")
        for idx, end in enumerate(self.boundaries()):
            if epoch < end:
                return idx
        raise IndexError(f"Epoch {epoch} not covered by schedule '{self.name}'")

    def stage_at(self, epoch: int) -> StageSpec:
        return self.stages[self.stage_index(epoch)]

    def temperature_at(self, epoch: int) -> float:
        return self.stage_at(epoch).temperature

    def draw_stage(self, epoch: int, rng=None) -> StageSpec:
        """Stage that supplies image parameters for one sample at this epoch"""
        return self.stage_at(epoch)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "total_epochs": self.total_epochs,
            "stages": [st.to_dict() for st in self.stages],
        }


@dataclass(frozen=True)
class ShuffledDiet:
    """
    SHF baseline: every sample draws its stage uniformly from the pool.

    Durations are ignored for image parameters; the contrastive temperature
    keeps following the original time-indexed schedule.
    """

    source: DietSchedule

    @property
    def name(self) -> str:
        return f"{self.source.name}-shf"

    @property
    def pooled(self) -> bool:
        return True

    @property
    def stages(self) -> Tuple[StageSpec, ...]:
        return self.source.stages

    @property
    def total_epochs(self) -> int:
        return self.source.total_epochs

    @property
    def durations(self) -> List[int]:
        return self.source.durations

    def stage_index(self, epoch: int) -> int:
        return self.source.stage_index(epoch)

    def stage_at(self, epoch: int) -> StageSpec:
        return self.source.stage_at(epoch)

    def temperature_at(self, epoch: int) -> float:
        return self.source.temperature_at(epoch)

    def draw_stage(self, epoch: int, rng=None) -> StageSpec:
        if not 0 <= epoch < self.total_epochs:
            raise IndexError(f"Epoch {epoch} outside [0, {self.total_epochs}) for schedule '{self.name}'")
        rng = numpy_rng(rng)
        return self.stages[int(rng.integers(len(self.stages)))]

    def to_dict(self) -> dict:
        return {**self.source.to_dict(), "name": self.name, "pooled": True}


DietSource = Union[DietSchedule, ShuffledDiet]


def apportion(base: Sequence[int], total_epochs: int, floor_one: bool = True) -> List[int]:
    """
    Rescale base durations to total_epochs by largest-remainder rounding.

    With floor_one every stage keeps at least one epoch; without it stages
    may round to zero (callers drop them).
    """
    base_total = sum(base)
    quotas = [Fraction(b * total_epochs, base_total) for b in base]
    alloc = [int(q) for q in quotas]
    if floor_one:
        alloc = [max(1, a) for a in alloc]

    remaining = total_epochs - sum(alloc)
    if remaining > 0:
        order = sorted(range(len(base)), key=lambda i: (-(quotas[i] - int(quotas[i])), i))
        for i in order[:remaining]:
            alloc[i] += 1
    while remaining < 0:
        candidates = [i for i in range(len(base)) if alloc[i] > 1]
        i = max(candidates, key=lambda j: (alloc[j] - quotas[j], -j))
        alloc[i] -= 1
        remaining += 1
    return alloc


def _check_total(name: str, total_epochs: int, n_stages: int):
    if not isinstance(total_epochs, int) or total_epochs < n_stages:
        raise ScheduleError(
            f"{name} needs total_epochs >= {n_stages} (one epoch per stage), got {total_epochs}"
        )


def _staged(name, total_epochs, base, sigmas, bands, temperatures, floor_one=True) -> DietSchedule:
    durations = apportion(base, total_epochs, floor_one=floor_one)
    stages = [
        StageSpec(
            duration_epochs=d,
            blur_sigma=float(sigma),
            kernel_size=kernel_for_sigma(sigma),
            saturation_range=band,
            temperature=tau,
        )
        for d, sigma, band, tau in zip(durations, sigmas, bands, temperatures)
        if d > 0
    ]
    return DietSchedule(name=name, stages=tuple(stages), total_epochs=total_epochs)


def build_cdiet(total_epochs: int) -> DietSchedule:
    """Five-stage color curriculum (grayscale-leaning to full color, no blur)"""
    _check_total("cdiet", total_epochs, len(CDIET_DURATIONS))
    return _staged(
        "cdiet",
        total_epochs,
        CDIET_DURATIONS,
        [0] * len(CDIET_DURATIONS),
        SATURATION_BANDS,
        CDIET_TEMPERATURES,
    )


def build_adiet(total_epochs: int) -> DietSchedule:
    """Five-stage acuity curriculum (blur sigma 4 down to 0, full color)"""
    _check_total("adiet", total_epochs, len(ADIET_DURATIONS))
    return _staged(
        "adiet",
        total_epochs,
        ADIET_DURATIONS,
        ADIET_SIGMAS,
        [FULL_COLOR] * len(ADIET_DURATIONS),
        ADIET_TEMPERATURES,
    )


def build_catdiet(total_epochs: int, compressed: bool = False) -> DietSchedule:
    """
    Eight-stage interleaving of the acuity and color curricula.

    compressed=True allows totals below 8: durations are apportioned
    without the one-epoch floor and empty stages are dropped.
    """
    if compressed:
        if not isinstance(total_epochs, int) or total_epochs < 1:
            raise ScheduleError(f"catdiet needs total_epochs >= 1, got {total_epochs}")
    else:
        _check_total("catdiet", total_epochs, len(CATDIET_DURATIONS))
    return _staged(
        "catdiet",
        total_epochs,
        CATDIET_DURATIONS,
        CATDIET_SIGMAS,
        [SATURATION_BANDS[b] for b in CATDIET_BANDS],
        CATDIET_TEMPERATURES,
        floor_one=not compressed,
    )


def build_tdiet(total_epochs: int) -> DietSchedule:
    """Temporality-only diet: one identity stage, temperature 0.1"""
    _check_total("tdiet", total_epochs, 1)
    stage = StageSpec(duration_epochs=total_epochs, temperature=TDIET_TEMPERATURE)
    return DietSchedule(name="tdiet", stages=(stage,), total_epochs=total_epochs)


BUILDERS = {
    "cdiet": build_cdiet,
    "adiet": build_adiet,
    "catdiet": build_catdiet,
    "tdiet": build_tdiet,
}


def stage_at(schedule: DietSource, epoch: int) -> StageSpec:
    """Unique stage whose half-open epoch interval contains epoch"""
    return schedule.stage_at(epoch)


def sample_stage_params(stage: StageSpec, rng_seed) -> StageParams:
    """Draw s uniformly from (lo, hi]; sigma and kernel come from the stage"""
    lo, hi = stage.saturation_range
    u = float(numpy_rng(rng_seed).random())
    s = hi - u * (hi - lo)
    return StageParams(s=s, sigma=stage.blur_sigma, kernel=stage.kernel_size)


def derive_baseline(schedule: DietSchedule, kind: str) -> DietSource:
    """
    Baseline variant of a staged diet.

    rev: stages reversed in full (parameters, durations, temperatures)
    shf: per-sample uniform draw over the stage pool
    fo:  stage-1 image parameters for every stage
    lo:  identity image parameters for every stage
    """
    kind = str(kind).lower()
    if isinstance(schedule, ShuffledDiet):
        raise ScheduleError(f"Cannot derive '{kind}' from an already pooled schedule '{schedule.name}'")

    if kind == "rev":
        name = schedule.name[: -len("-rev")] if schedule.name.endswith("-rev") else f"{schedule.name}-rev"
        return DietSchedule(name=name, stages=tuple(reversed(schedule.stages)), total_epochs=schedule.total_epochs)
    if kind == "shf":
        return ShuffledDiet(schedule)
    if kind == "fo":
        first = schedule.stages[0]
        stages = tuple(
            replace(
                st,
                blur_sigma=first.blur_sigma,
                kernel_size=first.kernel_size,
                saturation_range=first.saturation_range,
            )
            for st in schedule.stages
        )
        return DietSchedule(name=f"{schedule.name}-fo", stages=stages, total_epochs=schedule.total_epochs)
    if kind == "lo":
        stages = tuple(
            replace(st, blur_sigma=0.0, kernel_size=1, saturation_range=FULL_COLOR) for st in schedule.stages
        )
        return DietSchedule(name=f"{schedule.name}-lo", stages=stages, total_epochs=schedule.total_epochs)
    raise ScheduleError(f"Unknown baseline kind '{kind}'. Valid kinds: {', '.join(DERIVABLE_BASELINES)}")


def schedule_from_dict(doc: dict) -> DietSource:
    """Inverse of to_dict for DietSchedule and ShuffledDiet documents"""
    try:
        stages = tuple(StageSpec.from_dict(row) for row in doc["stages"])
        name = str(doc["name"])
        total = int(doc["total_epochs"])
    except (KeyError, TypeError, ValueError) as e:
        raise ScheduleError(f"Malformed schedule document: {e}") from e
    if doc.get("pooled"):
        base = name[: -len("-shf")] if name.endswith("-shf") else name
        return ShuffledDiet(DietSchedule(name=base, stages=stages, total_epochs=total))
    return DietSchedule(name=name, stages=stages, total_epochs=total)


def save_schedule(schedule: DietSource, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(schedule.to_dict(), indent=2))
    return path


def load_schedule(path: Path) -> DietSource:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ScheduleError(f"Cannot read schedule file {path}: {e}") from e
    schedule = schedule_from_dict(doc)
    logger.info(f"[OK] Schedule '{schedule.name}' loaded from: {path}")
    return schedule


@dataclass(frozen=True)
class TrainingPlan:
    """
    Full pretraining timeline: optional staged Phase 1, then SDiet Phase 2.

    The temporal objective (positive groups of adjacent frames) is on in
    both phases when tdiet_enabled; group_window is 0 otherwise.
    """

    phase1: Optional[DietSource]
    phase2_epochs: int
    phase2_temperature: float = PHASE2_TEMPERATURE
    tdiet_enabled: bool = True
    baseline_kind: str = "none"
    learner_kind: str = "contrastive"
    window: int = 1
    name: str = ""

    def __post_init__(self):
        problems = []
        if self.phase2_epochs < 0:
            problems.append(f"phase2_epochs must be >= 0, got {self.phase2_epochs}")
        if self.phase2_temperature <= 0:
            problems.append(f"phase2_temperature must be positive, got {self.phase2_temperature}")
        if self.baseline_kind not in BASELINE_KINDS:
            problems.append(f"baseline_kind must be one of {BASELINE_KINDS}, got '{self.baseline_kind}'")
        if self.learner_kind not in LEARNER_KINDS:
            problems.append(f"learner_kind must be one of {LEARNER_KINDS}, got '{self.learner_kind}'")
        if self.window < 0:
            problems.append(f"window must be >= 0, got {self.window}")
        if self.total_epochs < 1:
            problems.append("plan covers zero epochs")
        if problems:
            raise ScheduleError("; ".join(problems))

    @property
    def phase1_epochs(self) -> int:
        return self.phase1.total_epochs if self.phase1 is not None else 0

    @property
    def total_epochs(self) -> int:
        return self.phase1_epochs + self.phase2_epochs

    @property
    def group_window(self) -> int:
        return self.window if self.tdiet_enabled else 0

    def _check_epoch(self, epoch: int):
        if not 0 <= epoch < self.total_epochs:
            raise IndexError(f"Epoch {epoch} outside [0, {self.total_epochs}) for plan '{self.name}'")

    def phase_at(self, epoch: int) -> int:
        self._check_epoch(epoch)
        return 1 if epoch < self.phase1_epochs else 2

    def stage_at(self, epoch: int) -> Optional[StageSpec]:
        """Time-indexed Phase-1 stage, None during Phase 2"""
        if self.phase_at(epoch) == 2:
            return None
        return self.phase1.stage_at(epoch)

    def stage_number(self, epoch: int) -> Optional[int]:
        if self.phase_at(epoch) == 2:
            return None
        return self.phase1.stage_index(epoch) + 1

    def draw_stage(self, epoch: int, rng=None) -> Optional[StageSpec]:
        if self.phase_at(epoch) == 2:
            return None
        return self.phase1.draw_stage(epoch, rng)

    def temperature_at(self, epoch: int) -> float:
        if self.phase_at(epoch) == 2:
            return self.phase2_temperature
        return self.phase1.temperature_at(epoch)

    def phase_start(self, epoch: int) -> int:
        return 0 if self.phase_at(epoch) == 1 else self.phase1_epochs

    def phase_length(self, epoch: int) -> int:
        return self.phase1_epochs if self.phase_at(epoch) == 1 else self.phase2_epochs

    def resolved_table(self) -> List[dict]:
        """Per-epoch parameter rows stored in the run manifest"""
        rows = []
        for epoch in range(self.total_epochs):
            stage = self.stage_at(epoch)
            row = {
                "epoch": epoch,
                "phase": self.phase_at(epoch),
                "stage": self.stage_number(epoch),
                "temperature": self.temperature_at(epoch),
                "pooled": bool(stage is not None and self.phase1.pooled),
            }
            row.update(stage.image_params() if stage is not None else {"augmentation": "sdiet"})
            rows.append(row)
        return rows

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "learner_kind": self.learner_kind,
            "baseline_kind": self.baseline_kind,
            "tdiet_enabled": self.tdiet_enabled,
            "window": self.window,
            "phase1": self.phase1.to_dict() if self.phase1 is not None else None,
            "phase2_epochs": self.phase2_epochs,
            "phase2_temperature": self.phase2_temperature,
        }


def combdiet_phase1_epochs(total_epochs: int) -> int:
    """round(0.3 * total) with halves rounded up"""
    return (3 * total_epochs + 5) // 10


def build_combdiet_plan(
    total_epochs: int,
    learner_kind: str = "contrastive",
    window: int = 1,
    phase2_temperature: float = PHASE2_TEMPERATURE,
) -> TrainingPlan:
    """Two-phase plan: CATDiet over the first 30% of epochs, SDiet after"""
    if not isinstance(total_epochs, int) or total_epochs < 10:
        raise ScheduleError(f"combdiet needs total_epochs >= 10, got {total_epochs}")
    phase1_epochs = combdiet_phase1_epochs(total_epochs)
    compressed = phase1_epochs < len(CATDIET_DURATIONS)
    if compressed:
        logger.info(f"CombDiet Phase 1 has {phase1_epochs} epochs, using compressed CATDiet")
    return TrainingPlan(
        phase1=build_catdiet(phase1_epochs, compressed=compressed),
        phase2_epochs=total_epochs - phase1_epochs,
        phase2_temperature=phase2_temperature,
        tdiet_enabled=True,
        learner_kind=learner_kind,
        window=window,
        name="combdiet",
    )


def build_plan(
    diet: str,
    total_epochs: int,
    learner_kind: str = "contrastive",
    baseline: str = "none",
    window: int = 1,
    phase2_temperature: float = PHASE2_TEMPERATURE,
) -> TrainingPlan:
    """
    Training plan for one pretraining condition.

    Args:
        diet: cdiet, adiet, catdiet, tdiet, combdiet, std, or a schedule JSON path
        total_epochs: total pretraining epochs
        learner_kind: contrastive or distillation
        baseline: none, rev, shf, fo, lo (applied to Phase 1) or nonsmooth (window 0)
        window: adjacency window of the temporal positives
        phase2_temperature: contrastive temperature of every Phase 2 epoch

    Returns:
        TrainingPlan
    """
    diet_key = str(diet).lower()
    baseline = str(baseline).lower()
    if baseline not in BASELINE_KINDS:
        raise RegistryError(f"Unknown baseline '{baseline}'. Valid baselines: {', '.join(BASELINE_KINDS)}")
    if learner_kind not in LEARNER_KINDS:
        raise RegistryError(f"Unknown learner '{learner_kind}'. Valid learners: {', '.join(LEARNER_KINDS)}")

    if diet_key == "combdiet":
        plan = build_combdiet_plan(total_epochs, learner_kind, window, phase2_temperature)
    elif diet_key in ("cdiet", "adiet", "catdiet"):
        plan = TrainingPlan(
            phase1=BUILDERS[diet_key](total_epochs),
            phase2_epochs=0,
            tdiet_enabled=diet_key == "catdiet",
            learner_kind=learner_kind,
            window=window,
            name=diet_key,
        )
    elif diet_key in ("tdiet", "std"):
        if total_epochs < 1:
            raise ScheduleError(f"{diet_key} needs total_epochs >= 1, got {total_epochs}")
        plan = TrainingPlan(
            phase1=None,
            phase2_epochs=total_epochs,
            phase2_temperature=phase2_temperature,
            tdiet_enabled=diet_key == "tdiet",
            learner_kind=learner_kind,
            window=window,
            name=diet_key,
        )
    elif Path(str(diet)).suffix == ".json":
        schedule = load_schedule(Path(diet))
        if schedule.total_epochs != total_epochs:
            raise ScheduleError(
                f"Schedule file {diet} covers {schedule.total_epochs} epochs, run asks for {total_epochs}"
            )
        plan = TrainingPlan(
            phase1=schedule,
            phase2_epochs=0,
            tdiet_enabled=True,
            learner_kind=learner_kind,
            window=window,
            name=schedule.name,
        )
    else:
        raise RegistryError(f"Unknown diet '{diet}'. Valid diets: {', '.join(DIETS)} or a schedule .json file")

    if baseline in DERIVABLE_BASELINES:
        if plan.phase1 is None:
            raise ScheduleError(f"Baseline '{baseline}' needs a staged diet; '{diet_key}' has no Phase 1")
        plan = replace(
            plan,
            phase1=derive_baseline(plan.phase1, baseline),
            baseline_kind=baseline,
            name=f"{plan.name}-{baseline}",
        )
    elif baseline == "nonsmooth":
        plan = replace(plan, tdiet_enabled=False, baseline_kind=baseline, name=f"{plan.name}-nonsmooth")

    logger.debug(f"Plan '{plan.name}': phase1={plan.phase1_epochs} phase2={plan.phase2_epochs}")
    return plan
