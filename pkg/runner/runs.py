"""
Experiment runs - run configs, synthetic benchmarks, pretraining and
evaluation runs, sweeps and the mCE reference baseline
"""
import hashlib
import itertools
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence

import torch
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config.settings import RUN_ENV_PREFIX, apply_env_overrides, deep_merge, load_settings
from curriculum.schedules import BASELINE_KINDS, DIETS, PHASE2_TEMPERATURE, build_plan
from evaluation.metrics import (
    ErrorTable,
    corruption_errors,
    depth_accuracy,
    depth_accuracy_curve,
    mce,
    mean_and_se,
    shape_bias_from_rows,
    visual_cliff_table,
)
from evaluation.probe import (
    ProbeConfig,
    fit_probe,
    frames_from_videos,
    images_from_dataset,
    predict,
    top1_accuracy,
    write_predictions,
)
from evaluation.report import (
    EvalReport,
    load_report,
    plot_curve,
    plot_mce_bars,
    read_fim_curve,
    render_comparison,
    render_markdown,
    save_report,
)
from imaging.corruptions import CORRUPTION_TYPES, CorruptedDatasetManifest, build_corrupted_set
from learner.encoders import EncoderConfig, SSLModel, build_model
from learner.trainer import CHECKPOINT_NAME, METRICS_NAME, Trainer, TrainerConfig
from ops.errors import ConfigError, DataError, DevDietError, DivergenceError, UndefinedMetricError
from ops.seeding import derive_seed
from stimuli.generators import (
    gen_cliff_dataset,
    gen_cliff_views,
    gen_cue_conflict,
    gen_depth_dataset,
    gen_rotation_videos,
    gen_silhouettes,
)
from stimuli.ingest import ingest_image_folder, save_image_dataset, save_video_dataset
from stimuli.sampling import sample_test_frames
from stimuli.types import ImageDataset, ImageRecord, VideoDataset

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"
CONFIG_NAME = "config.yaml"
BASELINE_TABLE_NAME = "baseline_error_table.json"
PACKAGES = ("config", "curriculum", "imaging", "stimuli", "learner", "evaluation", "runner", "ops")
REPO_ROOT = Path(__file__).resolve().parent.parent

BENCHMARKS = ("acc", "mce", "shape", "depth", "cliff")
SWEEP_AXES = ("diet", "baseline", "learner", "backbone")
SYNTH_KINDS = ("rotation", "depth", "cliff", "cueconflict", "silhouette")
# folder-style spellings accepted on the command line
SYNTH_ALIASES = {"cue_conflict": "cueconflict", "silhouettes": "silhouette"}
# synth kind -> dataset folder under data_root
SYNTH_FOLDERS = {"cliff": "cliff", "cueconflict": "cue_conflict", "silhouette": "silhouettes"}

# benchmark folder under data_root -> command that creates it
BENCHMARK_SOURCES = {
    "rotation": "devdiet synth rotation",
    "depth_train": "devdiet synth depth",
    "depth_test": "devdiet synth depth",
    "cue_conflict": "devdiet synth cueconflict",
    "silhouettes": "devdiet synth silhouette",
    "cliff": "devdiet synth cliff",
    "corrupted": "devdiet corrupt",
}

PANELS = (
    ("Color", ("cdiet",)),
    ("Acuity", ("adiet",)),
    ("Temporality", ("tdiet",)),
    ("Combination", ("catdiet", "combdiet")),
)


# ---------------------------------------------------------------- run config


class RunConfig(BaseModel):
    """Everything that determines one pretraining run (with the code version)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = ""
    diet: str = "catdiet"
    baseline: str = "none"
    learner: Literal["contrastive", "distillation"] = "contrastive"
    backbone: Literal["residual_conv", "patch_attention"] = "residual_conv"
    preset: Literal["desk", "full"] = "desk"
    total_epochs: int = Field(30, ge=1)
    batch_size: int = Field(64, ge=2)
    frames_per_video: int = Field(10, ge=2)
    window: int = Field(1, ge=0)
    resolution: int = Field(64, ge=8)
    seed: int = 0
    dataset: str = "synthetic"
    dataset_seed: int = 0
    output_root: str = "./runs"
    workers: int = Field(1, ge=1)
    keep_epoch_checkpoints: bool = False

    @field_validator("diet")
    @classmethod
    def _known_diet(cls, value: str) -> str:
        if value.lower() in DIETS:
            return value.lower()
        if value.endswith(".json"):
            return value
        raise ValueError(f"unknown diet '{value}'. Valid diets: {', '.join(DIETS)} or a schedule .json file")

    @field_validator("baseline")
    @classmethod
    def _known_baseline(cls, value: str) -> str:
        if value.lower() not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline '{value}'. Valid baselines: {', '.join(BASELINE_KINDS)}")
        return value.lower()

    @property
    def condition(self) -> str:
        diet = Path(self.diet).stem if self.diet.endswith(".json") else self.diet
        return diet if self.baseline == "none" else f"{diet}-{self.baseline}"

    @property
    def run_name(self) -> str:
        return f"{self.name or self.condition}-s{self.seed}"


def validate_run_config(doc: Mapping) -> RunConfig:
    """
    Validate a run config dict, reporting every bad field at once.

    Raises:
        ConfigError: listing all problems
    """
    try:
        return RunConfig(**dict(doc))
    except ValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()]
        raise ConfigError("Invalid run config", problems) from e


def run_defaults(settings: Mapping) -> dict:
    desk = settings.get("desk", {})
    defaults = {
        key: desk[key]
        for key in ("total_epochs", "batch_size", "frames_per_video", "window", "resolution")
        if key in desk
    }
    defaults["output_root"] = settings.get("paths", {}).get("runs_root", "./runs")
    return defaults


def parse_overrides(pairs: Iterable[str]) -> dict:
    """["total_epochs=10", "diet=adiet"] -> {"total_epochs": 10, "diet": "adiet"}"""
    result = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"Override '{pair}' is not key=value")
        key, raw = pair.split("=", 1)
        result[key.strip()] = yaml.safe_load(raw)
    return result


def load_run_config(
    path: Optional[Path] = None,
    settings: Optional[Mapping] = None,
    env: Optional[Mapping] = None,
    overrides: Optional[Mapping] = None,
) -> RunConfig:
    """
    Build a RunConfig.

    Precedence (lowest to highest): built-in defaults < devdiet.yaml desk
    section < run config file < command-line overrides < DEVDIET_RUN__*
    environment variables.
    """
    settings = settings if settings is not None else load_settings(env=env)
    doc = run_defaults(settings)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Run config not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Run config {path} is not valid YAML: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Run config {path} must be a mapping")
        doc = deep_merge(doc, loaded)
    doc = deep_merge(doc, overrides or {})
    doc = apply_env_overrides(doc, env, prefix=RUN_ENV_PREFIX)
    return validate_run_config(doc)


# ---------------------------------------------------------------- provenance


def code_version() -> str:
    """Hash of the package sources (tests excluded)"""
    digest = hashlib.sha256()
    for package in PACKAGES:
        for path in sorted((REPO_ROOT / package).rglob("*.py")):
            if path.name.startswith("test_"):
                continue
            digest.update(path.relative_to(REPO_ROOT).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def dataset_hash(dataset: VideoDataset) -> str:
    digest = hashlib.sha256()
    for clip in dataset.clips:
        digest.update(f"{clip.id}|{clip.label}|{clip.split}".encode())
        digest.update(clip.frames.tobytes())
    return digest.hexdigest()


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def new_run_dir(root: Path, name: str) -> Path:
    """Fresh directory under root; an existing run is never reused"""
    root = Path(root)
    candidate, n = root / name, 2
    while candidate.exists():
        candidate = root / f"{name}-{n}"
        n += 1
    candidate.mkdir(parents=True)
    return candidate


class RunManifest(BaseModel):
    """Provenance of one run directory; paths are relative to run_dir"""

    model_config = ConfigDict(extra="forbid")

    run_id: str
    run_dir: str
    config: dict
    encoder: dict
    resolution: int
    config_hash: str
    code_version: str
    dataset_hash: str
    schedule_table: List[dict]
    checkpoints: List[dict] = Field(default_factory=list)
    metrics: str = METRICS_NAME
    status: str = "running"
    final_loss: Optional[float] = None
    error: Optional[str] = None

    @property
    def path(self) -> Path:
        return Path(self.run_dir)

    @property
    def run_config(self) -> RunConfig:
        return RunConfig(**self.config)

    def save(self) -> Path:
        target = self.path / MANIFEST_NAME
        target.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        return target

    @classmethod
    def load(cls, run_dir: Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if not path.exists():
            raise DataError(f"No run manifest in {run_dir}")
        manifest = cls.model_validate_json(path.read_text())
        manifest.run_dir = str(Path(run_dir))
        return manifest

    def checkpoint(self, epoch: Optional[int] = None) -> Path:
        name = CHECKPOINT_NAME if epoch is None else f"epoch_{epoch:03d}.pt"
        return self.path / "checkpoints" / name

    def epoch_checkpoints(self) -> List[int]:
        return sorted(c["epoch"] for c in self.checkpoints if c.get("epoch") is not None)

    def verify(self):
        """Every referenced artifact exists and matches its recorded hash"""
        for entry in self.checkpoints:
            path = self.path / entry["path"]
            if not path.exists():
                raise DataError(f"Checkpoint listed in manifest is missing: {path}")
            if file_hash(path) != entry["sha256"]:
                raise DataError(f"Checkpoint {path} does not match its recorded hash")
        if not (self.path / self.metrics).exists():
            raise DataError(f"Metrics file listed in manifest is missing: {self.path / self.metrics}")


def checkpoint_index(run_dir: Path) -> List[dict]:
    folder = Path(run_dir) / "checkpoints"
    entries = []
    for path in sorted(folder.glob("*.pt")):
        epoch = int(path.stem.split("_")[1]) if path.stem.startswith("epoch_") else None
        entries.append({"path": path.relative_to(run_dir).as_posix(), "epoch": epoch, "sha256": file_hash(path)})
    return entries


# ---------------------------------------------------------------- datasets


def resolve_video_dataset(config: RunConfig, settings: Mapping) -> VideoDataset:
    """The pretraining videos: rendered in memory for "synthetic", else read from disk"""
    if config.dataset == "synthetic":
        rotation = settings["synthetic"]["rotation"]
        return gen_rotation_videos(
            rotation["n_classes"],
            rotation["videos_per_class"],
            rotation["frames_per_video"],
            config.resolution,
            config.dataset_seed,
            rotation["test_fraction"],
        )
    path = Path(config.dataset)
    if not path.exists():
        raise DataError(f"Dataset {path} not found; create it with '{BENCHMARK_SOURCES['rotation']}'")
    dataset = ingest_image_folder(path)
    if not isinstance(dataset, VideoDataset):
        raise DataError(f"{path} holds still images; pretraining needs video clips")
    if len(dataset) == 0:
        raise DataError(f"{path} has no clips")
    return dataset


def benchmark_path(data_root: Path, name: str) -> Path:
    path = Path(data_root) / name
    if not path.exists():
        raise DataError(f"Benchmark dataset '{name}' not found at {path}; create it with '{BENCHMARK_SOURCES[name]}'")
    return path


def load_image_benchmark(data_root: Path, name: str) -> ImageDataset:
    dataset = ingest_image_folder(benchmark_path(data_root, name))
    if not isinstance(dataset, ImageDataset) or len(dataset) == 0:
        raise DataError(f"Benchmark dataset '{name}' under {data_root} is empty or not an image set")
    return dataset


def cliff_views(data_root: Path, seed: int, resolution: int, settings: Mapping):
    """The saved cliff set when data_root has one, otherwise a fresh rendering"""
    if (Path(data_root) / "cliff").exists():
        return [(record.image(), record.label) for record in load_image_benchmark(data_root, "cliff")]
    return gen_cliff_views(seed, resolution, settings["synthetic"]["cliff"])


def held_out_frames(videos: VideoDataset, frames_per_clip: int = 2, seed: int = 0) -> ImageDataset:
    """Held-out test frames as still images (the clean set that gets corrupted)"""
    records = []
    for clip in videos.split("test").clips:
        for ref in sample_test_frames(clip, frames_per_clip, seed):
            records.append(ImageRecord(ref.frame_id, clip.label, array=clip.frames[ref.index], split="test"))
    if not records:
        raise DataError(f"Dataset '{videos.name}' has no test clips")
    return ImageDataset(f"{videos.name}-test", tuple(records), videos.classes)


def _refuse_existing(path: Path, force: bool):
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"{path} already exists; pass --force to replace it")


def _staging_dir(final: Path, force: bool) -> Path:
    """Empty <final>.partial folder; an existing final folder is only replaced with force"""
    _refuse_existing(final, force)
    work = final.with_name(final.name + ".partial")
    if work.exists():
        shutil.rmtree(work)
    work.mkdir(parents=True)
    return work


def _publish(work: Path, final: Path) -> Path:
    if final.exists():
        shutil.rmtree(final)
    work.rename(final)
    return final


def synth(kind: str, settings: Mapping, data_root: Optional[Path] = None, seed: int = 0, force: bool = False) -> List[Path]:
    """
    Render one synthetic benchmark to disk.

    Args:
        kind: rotation, depth, cliff, cueconflict or silhouette (cue_conflict
            and silhouettes are accepted too)
        settings: repository settings (sizes and geometry)
        data_root: output root (default: paths.data_root)
        seed: generator seed
        force: replace an existing folder

    Returns:
        Written dataset folders
    """
    kind = SYNTH_ALIASES.get(kind, kind)
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"Unknown synthetic set '{kind}'. Valid sets: {', '.join(SYNTH_KINDS)}")
    data_root = Path(data_root or settings["paths"]["data_root"])
    resolution = settings["desk"]["resolution"]
    syn = settings["synthetic"]
    classes = list(range(syn["rotation"]["n_classes"]))

    if kind == "rotation":
        rotation = syn["rotation"]
        out = data_root / "rotation"
        _refuse_existing(out, force)
        videos = gen_rotation_videos(
            rotation["n_classes"],
            rotation["videos_per_class"],
            rotation["frames_per_video"],
            resolution,
            seed,
            rotation["test_fraction"],
            show_progress=True,
        )
        save_video_dataset(videos, out)
        return [out]
    if kind == "depth":
        depth = syn["depth"]
        outs = [data_root / "depth_train", data_root / "depth_test"]
        for out in outs:
            _refuse_existing(out, force)
        train = gen_depth_dataset(depth["n_train"], seed, resolution, "train", depth["min_gap_fraction"])
        test = gen_depth_dataset(depth["n_test"], derive_seed(seed, "depth-test"), resolution, "test", depth["min_gap_fraction"])
        save_image_dataset(train, outs[0])
        save_image_dataset(test, outs[1])
        return outs
    out = data_root / SYNTH_FOLDERS[kind]
    _refuse_existing(out, force)
    if kind == "cliff":
        dataset = gen_cliff_dataset(seed, resolution, syn["cliff"])
    elif kind == "cueconflict":
        dataset = gen_cue_conflict(classes, classes, syn["cue_conflict"]["n"], seed, resolution)
    else:
        dataset = gen_silhouettes(classes, syn["silhouettes"]["n"], seed, resolution)
    save_image_dataset(dataset, out)
    return [out]


def corrupt(
    settings: Mapping,
    source: Optional[Path] = None,
    types: Sequence[str] = CORRUPTION_TYPES,
    severities: Optional[Sequence[int]] = None,
    seed: int = 0,
    data_root: Optional[Path] = None,
    workers: Optional[int] = None,
    force: bool = False,
) -> CorruptedDatasetManifest:
    """Corrupt the held-out test frames of a video dataset into data_root/corrupted"""
    data_root = Path(data_root or settings["paths"]["data_root"])
    source = Path(source) if source else benchmark_path(data_root, "rotation")
    videos = ingest_image_folder(source)
    if not isinstance(videos, VideoDataset):
        raise DataError(f"{source} is not a video dataset")
    out = data_root / "corrupted"
    _refuse_existing(out, force)
    clean = held_out_frames(videos, settings["desk"]["test_frames_per_video"], seed)
    return build_corrupted_set(
        clean,
        types,
        severities or settings["corruptions"]["severities"],
        seed,
        out,
        workers or settings["corruptions"]["workers"],
        source=videos.name,
    )


# ---------------------------------------------------------------- pretraining


def encoder_config_for(config: RunConfig, settings: Mapping) -> EncoderConfig:
    return EncoderConfig(
        backbone_kind=config.backbone,
        preset=config.preset,
        prototypes=settings.get("distillation", {}).get("out_dim", 1024),
    )


def _save_epoch_snapshot(trainer: Trainer, row: dict):
    path = trainer.run_dir / "checkpoints" / f"epoch_{row['epoch']:03d}.pt"
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"epoch": row["epoch"], "model": trainer.state.model.state_dict()}, path)


def run_pretrain(config: RunConfig, settings: Optional[Mapping] = None, resume_dir: Optional[Path] = None) -> RunManifest:
    """
    Train one configuration into a fresh run directory.

    With resume_dir, continues that run from its last checkpoint; the
    stored config must equal `config`.

    Raises:
        ConfigError: invalid plan or a resume with a different config
        DivergenceError: loss became NaN or infinite (manifest marked diverged)
    """
    settings = settings if settings is not None else load_settings()
    plan = build_plan(
        config.diet,
        config.total_epochs,
        config.learner,
        config.baseline,
        config.window,
        settings.get("contrastive", {}).get("phase2_temperature", PHASE2_TEMPERATURE),
    )
    dataset = resolve_video_dataset(config, settings)
    encoder_config = encoder_config_for(config, settings)
    trainer_config = TrainerConfig.from_settings(
        settings, batch_size=config.batch_size, frames_per_video=config.frames_per_video, workers=config.workers
    )

    if resume_dir is not None:
        run_dir = Path(resume_dir)
        manifest = RunManifest.load(run_dir)
        if manifest.run_config != config:
            raise ConfigError(f"Run {run_dir} was started with a different config")
    else:
        run_dir = new_run_dir(Path(config.output_root), config.run_name)
        (run_dir / CONFIG_NAME).write_text(yaml.safe_dump(config.model_dump(), sort_keys=True))
        manifest = None

    trainer = Trainer(plan, dataset, encoder_config, config.seed, trainer_config, run_dir)
    if manifest is None:
        manifest = RunManifest(
            run_id=run_dir.name,
            run_dir=str(run_dir),
            config=config.model_dump(),
            encoder=encoder_config.model_dump(mode="json"),
            resolution=int(dataset.clips[0].frames.shape[1]),
            config_hash=trainer.hash,
            code_version=code_version(),
            dataset_hash=dataset_hash(dataset),
            schedule_table=plan.resolved_table(),
        )
        manifest.save()
    logger.info(f"Pretraining {manifest.run_id}: {plan.name}, {plan.total_epochs} epochs, {len(dataset)} clips")

    callback = _save_epoch_snapshot if config.keep_epoch_checkpoints else None
    try:
        state = trainer.train(resume=resume_dir is not None, epoch_callback=callback)
    except DivergenceError as e:
        manifest.status, manifest.error = "diverged", str(e)
        manifest.checkpoints = checkpoint_index(run_dir)
        manifest.save()
        logger.error(f"[ERROR] {manifest.run_id} diverged: {e}")
        raise

    manifest.status = "complete"
    manifest.final_loss = state.final_loss
    manifest.checkpoints = checkpoint_index(run_dir)
    manifest.save()
    logger.info(f"[OK] Run complete: {run_dir} (final loss {state.final_loss:.4f})")
    return manifest


def load_encoder(manifest: RunManifest, epoch: Optional[int] = None) -> SSLModel:
    """Trained model of a run (last checkpoint, or an epoch snapshot)"""
    path = manifest.checkpoint(epoch)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    config = manifest.run_config
    model = build_model(EncoderConfig(**manifest.encoder), config.learner, manifest.resolution)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model.load_state_dict(payload["model"])
    model.eval()
    return model


# ---------------------------------------------------------------- evaluation


def fixtures_dir(settings: Mapping) -> Path:
    """paths.fixtures_dir, relative paths taken from the repository root"""
    path = Path(settings["paths"]["fixtures_dir"])
    return path if path.is_absolute() else REPO_ROOT / path


def load_baseline_table(settings: Mapping) -> ErrorTable:
    """The committed mCE reference (evaluation/fixtures/baseline_error_table.json by default)"""
    path = fixtures_dir(settings) / BASELINE_TABLE_NAME
    if not path.exists():
        raise ConfigError(f"mCE baseline table {path} is missing; create it with 'devdiet baseline'")
    return ErrorTable.load(path)


def _phase_boundary(manifest: RunManifest) -> Optional[int]:
    phases = [row["phase"] for row in manifest.schedule_table]
    if 1 in phases and 2 in phases:
        return phases.index(2)
    return None


def fit_class_probe(manifest: RunManifest, encoder: SSLModel, settings: Mapping, videos: Optional[VideoDataset] = None):
    """Classification probe on training frames; returns (probe, test frames)"""
    config = manifest.run_config
    videos = videos or resolve_video_dataset(config, settings)
    train = frames_from_videos(videos, "train", config.frames_per_video)
    test = frames_from_videos(
        videos, "test", test_frames=settings["desk"]["test_frames_per_video"], seed=config.dataset_seed
    )
    k = len(videos.classes) or int(train.labels.max()) + 1
    probe = fit_probe(encoder, train, k, config.seed, ProbeConfig.from_settings(settings))
    return probe, test


def run_eval(
    run_dir: Path,
    benchmarks: Sequence[str] = BENCHMARKS,
    settings: Optional[Mapping] = None,
    data_root: Optional[Path] = None,
    force: bool = False,
) -> EvalReport:
    """
    Evaluate a finished run: Acc, mCE, S-Bias with silhouette accuracy,
    dAcc with its epoch curve, the visual-cliff table and the FIM curve.

    Outputs are staged in run_dir/eval.partial and renamed to run_dir/eval
    (report.json, report.md, predictions/, figures) once complete. An
    existing eval folder is kept unless force is set.
    """
    settings = settings if settings is not None else load_settings()
    unknown = sorted(set(benchmarks) - set(BENCHMARKS))
    if unknown:
        raise ConfigError(f"Unknown benchmarks {unknown}. Valid benchmarks: {', '.join(BENCHMARKS)}")
    manifest = RunManifest.load(run_dir)
    if manifest.status != "complete":
        raise DataError(f"Run {run_dir} is not complete (status: {manifest.status})")
    manifest.verify()
    config = manifest.run_config
    data_root = Path(data_root or settings["paths"]["data_root"])
    eval_dir = _staging_dir(manifest.path / "eval", force)
    pred_dir = eval_dir / "predictions"
    encoder = load_encoder(manifest)
    probe_config = ProbeConfig.from_settings(settings)

    report = EvalReport(
        model_id=manifest.run_id,
        config_hash=manifest.config_hash,
        checkpoint_hash=file_hash(manifest.checkpoint()),
    )

    if {"acc", "mce", "shape"} & set(benchmarks):
        probe, test = fit_class_probe(manifest, encoder, settings)
        probe.save(eval_dir / "class_probe.pt")
        if "acc" in benchmarks:
            report.acc = top1_accuracy(probe, encoder, test, pred_dir / "acc.jsonl")
            report.predictions["acc"] = "predictions/acc.jsonl"
        if "mce" in benchmarks:
            corrupted = CorruptedDatasetManifest.read(benchmark_path(data_root, "corrupted"))
            baseline = load_baseline_table(settings)
            table = corruption_errors(
                probe, encoder, corrupted, predictions_path=pred_dir / "corruptions.jsonl", model_id=manifest.run_id
            )
            table.save(eval_dir / "error_table.json")
            report.mce, report.ce_per_type = mce(table, baseline)
            report.predictions["mce"] = "predictions/corruptions.jsonl"
        if "shape" in benchmarks:
            cue = images_from_dataset(load_image_benchmark(data_root, "cue_conflict"))
            rows = predict(probe, encoder, cue)
            write_predictions(rows, pred_dir / "cue_conflict.jsonl")
            report.predictions["shape_bias"] = "predictions/cue_conflict.jsonl"
            try:
                report.shape_bias = shape_bias_from_rows(rows)
            except UndefinedMetricError as e:
                report.notes.append(f"S-Bias undefined: {e}")
            silhouettes = images_from_dataset(load_image_benchmark(data_root, "silhouettes"))
            report.silhouette_acc = top1_accuracy(probe, encoder, silhouettes, pred_dir / "silhouettes.jsonl")
            report.predictions["silhouette_acc"] = "predictions/silhouettes.jsonl"

    if {"depth", "cliff"} & set(benchmarks):
        depth_train = images_from_dataset(load_image_benchmark(data_root, "depth_train"))
        depth_test = images_from_dataset(load_image_benchmark(data_root, "depth_test"))
        depth_probe = fit_probe(encoder, depth_train, 2, config.seed, probe_config)
        depth_probe.save(eval_dir / "depth_probe.pt")
        if "depth" in benchmarks:
            report.depth_acc = depth_accuracy(depth_probe, encoder, depth_test, pred_dir / "depth.jsonl")
            report.predictions["depth_acc"] = "predictions/depth.jsonl"
            epochs = manifest.epoch_checkpoints()
            if epochs:
                series = [(e, load_encoder(manifest, e)) for e in epochs]
                report.depth_curve = depth_accuracy_curve(
                    series, depth_train, depth_test, config.seed, probe_config, pred_dir / "depth_curve"
                )
                plot_curve(report.depth_curve, eval_dir / "dacc.svg", "dAcc", manifest.run_id, chance=0.5)
                report.figures["dacc"] = "dacc.svg"
        if "cliff" in benchmarks:
            views = cliff_views(data_root, config.seed, manifest.resolution, settings)
            cliff = visual_cliff_table(depth_probe, encoder, views, pred_dir / "cliff.jsonl")
            report.cliff = cliff.to_dict()
            report.predictions["cliff"] = "predictions/cliff.jsonl"

    report.fim_curve = read_fim_curve(manifest.path / manifest.metrics)
    if report.fim_curve:
        plot_curve(report.fim_curve, eval_dir / "fim.svg", "FIM trace", manifest.run_id, phase_boundary=_phase_boundary(manifest))
        report.figures["fim"] = "fim.svg"

    save_report(report, eval_dir / "report.json")
    (eval_dir / "report.md").write_text(render_markdown([report]))
    _publish(eval_dir, manifest.path / "eval")
    return report


def run_probe(run_dir: Path, settings: Optional[Mapping] = None, force: bool = False) -> float:
    """Fit the classification probe only (into run_dir/probe) and return clean test accuracy"""
    settings = settings if settings is not None else load_settings()
    manifest = RunManifest.load(run_dir)
    probe_dir = _staging_dir(manifest.path / "probe", force)
    encoder = load_encoder(manifest)
    probe, test = fit_class_probe(manifest, encoder, settings)
    probe.save(probe_dir / "class_probe.pt")
    acc = top1_accuracy(probe, encoder, test, probe_dir / "predictions" / "acc.jsonl")
    _publish(probe_dir, manifest.path / "probe")
    return acc


def compare_reports(run_dirs: Sequence[Path], out: Optional[Path] = None) -> str:
    """Side-by-side Markdown of several runs' reports, plus an mCE bar chart"""
    reports = [load_report(Path(d) / "eval" / "report.json") for d in run_dirs]
    text = render_markdown(reports)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.md").write_text(text)
        bars = [(r.model_id, r.mce, 0.0) for r in reports if r.mce is not None]
        if bars:
            plot_mce_bars(bars, out / "mce.svg")
    return text


# ---------------------------------------------------------------- baseline


def run_baseline(
    settings: Optional[Mapping] = None,
    seed: int = 0,
    total_epochs: Optional[int] = None,
    data_root: Optional[Path] = None,
    force: bool = False,
) -> ErrorTable:
    """
    Train the fixed-seed STD reference model and freeze its ErrorTable as
    the mCE normalization fixture.
    """
    settings = settings if settings is not None else load_settings()
    target = fixtures_dir(settings) / BASELINE_TABLE_NAME
    if target.exists() and not force:
        raise ConfigError(f"{target} already exists; pass --force to replace the reference table")
    overrides = {"name": "std-reference", "diet": "std", "baseline": "none", "seed": seed}
    if total_epochs is not None:
        overrides["total_epochs"] = total_epochs
    config = validate_run_config(deep_merge(run_defaults(settings), overrides))
    manifest = run_pretrain(config, settings)
    encoder = load_encoder(manifest)
    probe, _ = fit_class_probe(manifest, encoder, settings)
    corrupted = CorruptedDatasetManifest.read(benchmark_path(Path(data_root or settings["paths"]["data_root"]), "corrupted"))
    table = corruption_errors(probe, encoder, corrupted, model_id=f"std-reference-s{seed}@{manifest.code_version}")
    table.dataset_id = f"{Path(corrupted.source).name}@{corrupted.registry_version}/seed{corrupted.seed}"
    for c in table.types:
        if table.aggregate(c) <= 0.0:
            logger.warning(f"[WARN] Reference error for '{c}' is zero; mCE will be undefined for it")
    table.save(target)
    logger.info(f"[OK] Baseline error table frozen at {target}")
    return table


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    runs: List[dict] = field(default_factory=list)
    table: str = ""
    sweep_dir: Optional[Path] = None

    @property
    def failures(self) -> List[dict]:
        return [r for r in self.runs if r["status"] != "ok"]


def expand_sweep(template: RunConfig, axes: Mapping[str, Sequence[str]], seeds: Sequence[int]) -> List[RunConfig]:
    """Cartesian product of the axis values, once per seed"""
    unknown = sorted(set(axes) - set(SWEEP_AXES))
    if unknown:
        raise ConfigError(f"Unknown sweep axes {unknown}. Valid axes: {', '.join(SWEEP_AXES)}")
    names = [a for a in SWEEP_AXES if a in axes]
    configs, problems = [], []
    for combo in itertools.product(*(axes[n] for n in names)):
        for seed in seeds:
            doc = {**template.model_dump(), **dict(zip(names, combo)), "seed": seed, "name": ""}
            try:
                configs.append(validate_run_config(doc))
            except ConfigError as e:
                problems.extend(e.problems)
    if problems:
        raise ConfigError("Invalid sweep values", sorted(set(problems)))
    return configs


def sweep_condition(config: RunConfig, axes: Iterable[str]) -> str:
    label = config.condition
    extras = [getattr(config, a) for a in ("learner", "backbone") if a in axes]
    return "/".join([label] + extras)


def panel_of(config: RunConfig) -> List[str]:
    if config.diet == "std":
        return [name for name, _ in PANELS]
    if config.baseline == "nonsmooth":
        return ["Temporality"]
    for name, diets in PANELS:
        if config.diet in diets:
            return [name]
    return ["Combination"]


def _sweep_job(doc: dict, settings: dict, benchmarks: Sequence[str], data_root: Optional[str]) -> dict:
    config = RunConfig(**doc)
    result = {"config": doc, "run": config.run_name, "status": "ok", "run_dir": None, "report": None, "error": None}
    try:
        manifest = run_pretrain(config, settings)
        result["run_dir"] = manifest.run_dir
        if benchmarks:
            result["report"] = run_eval(Path(manifest.run_dir), benchmarks, settings, data_root).model_dump(mode="json")
    except (DevDietError, ValueError, RuntimeError, OSError) as e:
        result["status"], result["error"] = "failed", f"{type(e).__name__}: {e}"
        logger.error(f"[ERROR] Sweep run {config.run_name} failed: {e}")
    return result


def _metric(reports: List[dict], key: str, scale: float):
    values = [r[key] * scale for r in reports if r.get(key) is not None]
    return mean_and_se(values) if values else None


def comparison_panels(runs: Sequence[dict], axes: Iterable[str]) -> List[dict]:
    grouped: Dict[str, List[dict]] = {}
    configs: Dict[str, RunConfig] = {}
    for run in runs:
        config = RunConfig(**run["config"])
        key = sweep_condition(config, axes)
        grouped.setdefault(key, []).append(run)
        configs[key] = config
    panels = {name: [] for name, _ in PANELS}
    for key, group in grouped.items():
        reports = [r["report"] for r in group if r["status"] == "ok" and r["report"]]
        failed = sum(1 for r in group if r["status"] != "ok")
        row = {
            "condition": key,
            "n": len(group) - failed,
            "acc": _metric(reports, "acc", 100.0),
            "mce": _metric(reports, "mce", 1.0),
            "shape_bias": _metric(reports, "shape_bias", 100.0),
            "depth_acc": _metric(reports, "depth_acc", 100.0),
            "status": "ok" if not failed else ("failed" if failed == len(group) else f"{failed} failed"),
        }
        for panel in panel_of(configs[key]):
            panels[panel].append(row)
    return [{"name": name, "rows": rows} for name, rows in panels.items() if rows]


def run_sweep(
    template: RunConfig,
    axes: Mapping[str, Sequence[str]],
    seeds: Sequence[int] = (0,),
    workers: int = 1,
    benchmarks: Sequence[str] = BENCHMARKS,
    settings: Optional[Mapping] = None,
    data_root: Optional[Path] = None,
) -> SweepResult:
    """
    Run every combination of the axis values and tabulate them.

    Failing runs are recorded and do not stop the sweep. The comparison
    table groups conditions into Color, Acuity, Temporality and
    Combination panels with mean +/- standard error over seeds.
    """
    settings = dict(settings if settings is not None else load_settings())
    configs = expand_sweep(template, axes, seeds)
    logger.info(f"Sweep: {len(configs)} runs over {dict(axes)} x seeds {list(seeds)}")
    docs = [c.model_dump() for c in configs]
    root = str(data_root) if data_root else None

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_sweep_job, docs, [settings] * len(docs), [list(benchmarks)] * len(docs), [root] * len(docs)))
    else:
        runs = [_sweep_job(doc, settings, list(benchmarks), root) for doc in docs]

    panels = comparison_panels(runs, axes)
    failures = [{"run": r["run"], "error": r["error"]} for r in runs if r["status"] != "ok"]
    table = render_comparison(panels, len(seeds), failures, title=template.name or "sweep")

    sweep_dir = new_run_dir(Path(template.output_root) / "sweeps", template.name or "sweep")
    (sweep_dir / "sweep.json").write_text(json.dumps(runs, indent=2, sort_keys=True) + "\n")
    (sweep_dir / "comparison.md").write_text(table)
    bars = [(row["condition"], *row["mce"]) for panel in panels for row in panel["rows"] if row["mce"]]
    if bars:
        plot_mce_bars(sorted(set(bars)), sweep_dir / "mce.svg")
    if failures:
        logger.warning(f"[WARN] {len(failures)} of {len(runs)} sweep runs failed")
    logger.info(f"[OK] Sweep written to {sweep_dir}")
    return SweepResult(runs, table, sweep_dir)


__all__ = [
    "BENCHMARKS",
    "RunConfig",
    "RunManifest",
    "SweepResult",
    "compare_reports",
    "corrupt",
    "expand_sweep",
    "load_run_config",
    "run_baseline",
    "run_eval",
    "run_pretrain",
    "run_probe",
    "run_sweep",
    "synth",
]
