"""End-to-end experiment orchestration.

The experiment runs as six idempotent stages (corpus, extract, train,
score, fuse, eval) wired by content-hashed stamp files; every stage is a
deterministic function of the run configuration and seed, so rerunning a
stage rewrites byte-identical artifacts.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import backends, storage
from .audio import read_wav
from .corpus import (
    CorpusSpec,
    build_corpus,
    derived_seed,
    read_manifest,
    speaker_of,
    wav_path,
)
from .evaluation import (
    HUMAN,
    FusionWeights,
    ScoreSet,
    TrialSet,
    compute_eer,
    fuse_scores,
    leave_one_spoof_out,
    tune_weights,
)
from .features import (
    FrameConfig,
    FrameMatrix,
    GmmPosteriorgram,
    GroupDelayConfig,
    MfccConfig,
    append_deltas,
    compute_mfcc,
    compute_mgdcc,
    energy_vad,
)
from .functionals import FunctionalConfig, extract_functionals, feature_names
from .gmm import accumulate_stats, train_gmm
from .ivector import extract_ivectors, train_pca, train_tv
from .storage import read_indexed_matrix, write_indexed_matrix

IVECTOR_STREAMS = ("mfcc", "mfcc-ppp", "mgdcc-ppp")
ALL_STREAMS = IVECTOR_STREAMS + ("functionals",)
BACKENDS = ("svm-linear", "svm-poly", "cosine", "knn", "plda", "plda2")
STAGES = ("corpus", "extract", "train", "score", "fuse", "eval")


def stream_backends(stream: str) -> tuple:
    """Utterance-level functionals feed the SVMs only; i-vectors feed all."""
    if stream == "functionals":
        return ("svm-linear", "svm-poly")
    return BACKENDS


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


class MissingArtifactError(RuntimeError):
    """Raised when a stage's prerequisites are absent or stale."""


@dataclass(frozen=True)
class RunConfig:
    work_dir: str = "runs/default"
    seed: int = 42
    jobs: int = 1

    # corpus (desk scale)
    n_speakers: int = 10
    utterances_per_speaker: int = 20
    duration_min: float = 1.0
    duration_max: float = 1.8

    # frame-level front end
    mfcc_ceps: int = 18
    mel_filters: int = 27
    delta_window: int = 2
    vad_threshold_db: float = -40.0
    mgd_rho: float = 0.4
    mgd_gamma: float = 0.2
    mgd_lifter: int = 30
    mgd_ceps: int = 18

    # tandem posteriors
    provider_components: int = 64
    tandem_dim: int = 32

    # UBM / total variability
    ubm_components: int = 64
    ubm_iters: int = 10
    ubm_kmeans_iters: int = 5
    ubm_max_frames: int = 120_000
    tv_rank: int = 50
    tv_iters: int = 5

    # back ends
    knn_k: int = 5
    plda_rank: int = 10
    plda2_speaker_rank: int = 10
    plda2_channel_rank: int = 5
    plda_iters: int = 15
    svm_c: float = 1.0
    svm_degree: int = 2
    svm_gain: float = 0.0  # <= 0: auto-scale to 1/dim so kernel values stay O(1)
    svm_coef0: float = 1.0
    svm_tol: float = 1e-3

    # fusion and reports
    fusion_backend: str = "svm-poly"
    fusion_grid_step: float = 0.05
    loso_stream: str = "mfcc-ppp"
    sweep_stream: str = "mfcc-ppp"
    sweep_degrees: tuple = (1, 2, 3, 4, 10)
    sweep_train_per_class: int = 50

    def __post_init__(self):
        if self.fusion_backend not in BACKENDS:
            raise ConfigError(f"unknown fusion backend {self.fusion_backend!r}")
        if self.loso_stream not in ALL_STREAMS or self.sweep_stream not in IVECTOR_STREAMS:
            raise ConfigError("loso/sweep stream must name a configured feature stream")
        if not 0 < self.duration_min <= self.duration_max:
            raise ConfigError("need 0 < duration_min <= duration_max")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.tandem_dim > self.provider_components:
            raise ConfigError("tandem_dim cannot exceed provider_components")

    # ---- derived config objects

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            n_speakers=self.n_speakers,
            utterances_per_speaker=self.utterances_per_speaker,
            duration_range=(self.duration_min, self.duration_max),
            seed=self.seed,
        )

    def frame_config(self) -> FrameConfig:
        return FrameConfig()

    def mfcc_config(self) -> MfccConfig:
        return MfccConfig(n_mel_filters=self.mel_filters, n_ceps=self.mfcc_ceps,
                          delta_window=self.delta_window)

    def mgd_config(self) -> GroupDelayConfig:
        return GroupDelayConfig(rho=self.mgd_rho, gamma=self.mgd_gamma,
                                smooth_lifter_len=self.mgd_lifter, n_ceps=self.mgd_ceps)

    def functional_config(self) -> FunctionalConfig:
        return FunctionalConfig(frame=self.frame_config(), mfcc=self.mfcc_config(),
                                vad_threshold_db=self.vad_threshold_db)

    def svm_kernel(self, degree: int | None = None, dim: int = 1) -> backends.SvmKernel:
        if degree is None:
            degree = self.svm_degree
        gain = self.svm_gain if self.svm_gain > 0 else 1.0 / max(dim, 1)
        return backends.SvmKernel("poly", degree, gain, self.svm_coef0)

    # ---- paths

    @property
    def root(self) -> Path:
        return Path(self.work_dir)

    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    def features_dir(self) -> Path:
        return self.root / "features"

    def models_dir(self) -> Path:
        return self.root / "models"

    def ivectors_dir(self) -> Path:
        return self.root / "ivectors"

    def scores_dir(self) -> Path:
        return self.root / "scores"

    def reports_dir(self) -> Path:
        return self.root / "reports"

    def stamps_dir(self) -> Path:
        return self.root / "stamps"

    @staticmethod
    def from_ini(path=None, overrides: dict | None = None) -> "RunConfig":
        """Build a config from an INI file of [section] key=value pairs.

        Section names are organisational only; keys map directly onto
        RunConfig fields. Unknown keys are rejected.
        """
        values: dict = {}
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                read = parser.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse config {path}: {exc}") from exc
            if not read:
                raise ConfigError(f"config file not found: {path}")
            for section in parser.sections():
                for key, raw in parser.items(section):
                    values[key] = raw
        if overrides:
            values.update({k: v for k, v in overrides.items() if v is not None})
        kwargs = {}
        for key, raw in values.items():
            if key not in RunConfig.__dataclass_fields__:
                raise ConfigError(f"unknown config key {key!r}")
            default = RunConfig.__dataclass_fields__[key].default
            try:
                if key == "sweep_degrees":
                    kwargs[key] = tuple(int(p) for p in str(raw).split(",") if p.strip())
                elif isinstance(default, bool):
                    kwargs[key] = str(raw).lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kwargs[key] = int(raw)
                elif isinstance(default, float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = raw
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        try:
            return RunConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def manifest_text(self) -> str:
        lines = [f"{k}={v}" for k, v in sorted(asdict(self).items()) if k not in ("work_dir", "jobs")]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# stage stamps


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _config_hash(cfg: RunConfig, keys: tuple) -> str:
    payload = {k: getattr(cfg, k) for k in keys}
    return _hash_bytes(json.dumps(payload, sort_keys=True, default=str).encode())


_STAGE_KEYS = {
    "corpus": ("seed", "n_speakers", "utterances_per_speaker", "duration_min", "duration_max"),
    "extract": ("mfcc_ceps", "mel_filters", "delta_window", "vad_threshold_db",
                "mgd_rho", "mgd_gamma", "mgd_lifter", "mgd_ceps"),
    "train": ("provider_components", "tandem_dim", "ubm_components", "ubm_iters",
              "ubm_kmeans_iters", "ubm_max_frames", "tv_rank", "tv_iters", "knn_k",
              "plda_rank", "plda2_speaker_rank", "plda2_channel_rank", "plda_iters",
              "svm_c", "svm_degree", "svm_gain", "svm_coef0", "svm_tol"),
    "score": (),
    "fuse": ("fusion_backend", "fusion_grid_step"),
    "eval": ("loso_stream", "sweep_stream", "sweep_degrees", "sweep_train_per_class"),
}
_STAGE_DEPS = {
    "corpus": (),
    "extract": ("corpus",),
    "train": ("corpus", "extract"),
    "score": ("corpus", "train"),
    "fuse": ("corpus", "score"),
    "eval": ("corpus", "score", "fuse"),
}


def _stamp_path(cfg: RunConfig, stage: str) -> Path:
    return cfg.stamps_dir() / f"{stage}.json"


def _write_stamp(cfg: RunConfig, stage: str) -> None:
    stamp = {
        "stage": stage,
        "config": _config_hash(cfg, _STAGE_KEYS[stage] + ("seed",)),
        "inputs": {dep: json.loads(_stamp_path(cfg, dep).read_text())["config"]
                   for dep in _STAGE_DEPS[stage]},
    }
    cfg.stamps_dir().mkdir(parents=True, exist_ok=True)
    _stamp_path(cfg, stage).write_text(json.dumps(stamp, sort_keys=True, indent=1) + "\n")


def _require_stage(cfg: RunConfig, stage: str) -> None:
    path = _stamp_path(cfg, stage)
    if not path.exists():
        raise MissingArtifactError(
            f"stage '{stage}' has not produced its artifacts yet: run `antispoof {stage}` first"
        )
    stamp = json.loads(path.read_text())
    if stamp["config"] != _config_hash(cfg, _STAGE_KEYS[stage] + ("seed",)):
        raise MissingArtifactError(
            f"artifacts of stage '{stage}' are stale for this configuration: rerun `antispoof {stage}`"
        )


# ---------------------------------------------------------------------------
# stage: corpus


def stage_corpus(cfg: RunConfig) -> TrialSet:
    trials = build_corpus(cfg.corpus_spec(), cfg.corpus_dir())
    _write_stamp(cfg, "corpus")
    return trials


def load_trials(cfg: RunConfig) -> TrialSet:
    _require_stage(cfg, "corpus")
    return read_manifest(cfg.corpus_dir() / "manifest.tsv")


# ---------------------------------------------------------------------------
# stage: extract


def _extract_one(args):
    cfg, trial = args
    w = read_wav(wav_path(cfg.corpus_dir(), trial))
    fcfg, mcfg, gcfg = cfg.frame_config(), cfg.mfcc_config(), cfg.mgd_config()
    mask = energy_vad(w, fcfg, cfg.vad_threshold_db)
    mfcc = append_deltas(compute_mfcc(w, fcfg, mcfg), cfg.delta_window).data[mask]
    mgdcc = append_deltas(compute_mgdcc(w, fcfg, gcfg, cfg.mel_filters), cfg.delta_window).data[mask]
    funcs = extract_functionals(w, cfg.functional_config())
    return trial.utterance_id, mfcc, mgdcc, funcs


def stage_extract(cfg: RunConfig) -> None:
    trials = load_trials(cfg)
    out = cfg.features_dir()
    for split in ("train", "dev", "eval"):
        entries = [e for e in trials.entries if e.split == split]
        work = [(cfg, e) for e in entries]
        if cfg.jobs > 1:
            with Pool(cfg.jobs) as pool:
                results = list(pool.imap(_extract_one, work, chunksize=16))
        else:
            results = [_extract_one(item) for item in work]
        ids = [r[0] for r in results]
        write_indexed_matrix(out / f"{split}_mfcc.bin", ids, [r[1] for r in results])
        write_indexed_matrix(out / f"{split}_mgdcc.bin", ids, [r[2] for r in results])
        write_indexed_matrix(out / f"{split}_functionals.bin", ids, [r[3] for r in results])
    names = feature_names(cfg.functional_config())
    (out / "functionals_names.txt").write_text("\n".join(names) + "\n", encoding="utf-8")
    _write_stamp(cfg, "extract")


# ---------------------------------------------------------------------------
# stage: train


def _subsample_rows(x: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if len(x) <= cap:
        return x
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(x), size=cap, replace=False))
    return x[idx]


def _tandem_block(cfg: RunConfig, provider, pca, mfcc_frames: np.ndarray) -> np.ndarray:
    posts = provider.posteriorgram(FrameMatrix(mfcc_frames))
    return pca.transform(np.log(np.maximum(posts, 1e-10)))


def _stream_vector_file(cfg: RunConfig, split: str, stream: str) -> Path:
    if stream == "functionals":
        return cfg.features_dir() / f"{split}_functionals.bin"
    return cfg.ivectors_dir() / f"{split}_{stream}.bin"


def load_stream_vectors(cfg: RunConfig, split: str, stream: str) -> dict[str, np.ndarray]:
    """Per-utterance vectors of one stream: i-vectors or functionals."""
    data = read_indexed_matrix(_stream_vector_file(cfg, split, stream))
    return {utt: rows[0] for utt, rows in data.items()}


def stage_train(cfg: RunConfig) -> None:
    _require_stage(cfg, "extract")
    trials = load_trials(cfg)
    models = cfg.models_dir()
    models.mkdir(parents=True, exist_ok=True)

    features = {split: {kind: read_indexed_matrix(cfg.features_dir() / f"{split}_{kind}.bin")
                        for kind in ("mfcc", "mgdcc")}
                for split in ("train", "dev", "eval")}
    train_ids = [e.utterance_id for e in trials.entries if e.split == "train"]

    # posteriorgram provider + tandem PCA, trained on the train split
    pooled_mfcc = np.vstack([features["train"]["mfcc"][u] for u in train_ids])
    pooled_mfcc = _subsample_rows(pooled_mfcc, cfg.ubm_max_frames, derived_seed(cfg.seed, "provider"))
    provider_gmm = train_gmm(pooled_mfcc, cfg.provider_components, iters=cfg.ubm_iters,
                             seed=derived_seed(cfg.seed, "provider-gmm") % 2**32,
                             kmeans_iters=cfg.ubm_kmeans_iters)
    storage.write_gmm(models / "provider_gmm.sfg", provider_gmm)
    provider = GmmPosteriorgram(provider_gmm)
    log_posts = np.log(np.maximum(provider.posteriorgram(FrameMatrix(pooled_mfcc)), 1e-10))
    pca = train_pca(log_posts, cfg.tandem_dim)
    storage.write_pca(models / "tandem_pca.sfp", pca)

    # assemble tandem streams and train one UBM + TV per i-vector stream
    for stream in IVECTOR_STREAMS:
        stream_frames = {}
        for split in ("train", "dev", "eval"):
            ids = [e.utterance_id for e in trials.entries if e.split == split]
            frames = {}
            for utt in ids:
                mfcc = features[split]["mfcc"][utt]
                if stream == "mfcc":
                    frames[utt] = mfcc
                else:
                    base = mfcc if stream == "mfcc-ppp" else features[split]["mgdcc"][utt]
                    frames[utt] = np.hstack([base, _tandem_block(cfg, provider, pca, mfcc)])
            stream_frames[split] = frames

        pooled = np.vstack(list(stream_frames["train"].values()))
        pooled = _subsample_rows(pooled, cfg.ubm_max_frames, derived_seed(cfg.seed, stream, "ubm"))
        ubm = train_gmm(pooled, cfg.ubm_components, iters=cfg.ubm_iters,
                        seed=derived_seed(cfg.seed, stream, "ubm-seed") % 2**32,
                        kmeans_iters=cfg.ubm_kmeans_iters)
        storage.write_gmm(models / f"ubm_{stream}.sfg", ubm)

        train_stats = [accumulate_stats(stream_frames["train"][u], ubm) for u in sorted(stream_frames["train"])]
        tv = train_tv(train_stats, ubm, cfg.tv_rank, iters=cfg.tv_iters,
                      seed=derived_seed(cfg.seed, stream, "tv") % 2**32)
        storage.write_tv(models / f"tv_{stream}.sft", tv)

        for split in ("train", "dev", "eval"):
            ids = sorted(stream_frames[split])
            stats = (train_stats if split == "train"
                     else [accumulate_stats(stream_frames[split][u], ubm) for u in ids])
            ivecs = extract_ivectors(stats, tv)
            write_indexed_matrix(cfg.ivectors_dir() / f"{split}_{stream}.bin",
                                 ids, [iv[None, :] for iv in ivecs])

    # back ends per stream
    label_of = {e.utterance_id: e for e in trials.entries}
    for stream in ALL_STREAMS:
        vectors = load_stream_vectors(cfg, "train", stream)
        ids = sorted(vectors)
        x = np.vstack([vectors[u] for u in ids])
        is_human = np.array([label_of[u].label == HUMAN for u in ids])
        channels = np.array([label_of[u].spoof_type if not h else "human"
                             for u, h in zip(ids, is_human)])
        speakers = np.array([speaker_of(u) for u in ids])
        train_backends(cfg, stream, x, is_human, channels, speakers)
    _write_stamp(cfg, "train")


def train_backends(cfg: RunConfig, stream: str, x, is_human, channels, speakers) -> None:
    """Fit and persist this stream's back ends."""
    models = cfg.models_dir() / "backends"
    selected = stream_backends(stream)
    y = np.where(is_human, 1.0, -1.0)

    scaler = backends.fit_minmax(x)
    storage.write_scaler(models / f"{stream}_scaler.sfs", scaler)
    scaled = backends.apply_minmax(x, scaler)
    for name, degree in (("svm-linear", 1), ("svm-poly", cfg.svm_degree)):
        kernel = cfg.svm_kernel(degree, dim=x.shape[1])
        model = backends.fit_svm(scaled, y, kernel, c=cfg.svm_c, tol=cfg.svm_tol)
        storage.write_svm(models / f"{stream}_{name}.sfv", model)

    if "cosine" in selected:
        storage.write_cosine(models / f"{stream}_cosine.sfc", backends.fit_cosine(x[is_human]))

    if "knn" in selected:
        normalized = backends.length_normalize(x)
        knn = backends.KnnModel(normalized, is_human, cfg.knn_k)
        storage.write_knn(models / f"{stream}_knn.sfk", knn)

    if "plda" in selected:
        plda = backends.fit_plda(x, channels, r_v=cfg.plda_rank, iters=cfg.plda_iters,
                                 seed=derived_seed(cfg.seed, stream, "plda") % 2**32)
        scorer = backends.PldaScorer(plda, human_enrollment=x[is_human])
        storage.write_plda(models / f"{stream}_plda.sfl", plda, scorer.enroll)

    if "plda2" in selected:
        plda2 = backends.fit_plda(x, speakers, r_v=cfg.plda2_speaker_rank,
                                  r_u=cfg.plda2_channel_rank, iters=cfg.plda_iters,
                                  channel_labels=channels,
                                  seed=derived_seed(cfg.seed, stream, "plda2") % 2**32)
        scorer2 = backends.PldaScorer(plda2, human_enrollment=x[is_human])
        storage.write_plda(models / f"{stream}_plda2.sfl", plda2, scorer2.enroll)


# ---------------------------------------------------------------------------
# stage: score


def _knn_scores(vectors: np.ndarray, model: backends.KnnModel) -> np.ndarray:
    d2 = (
        np.sum(vectors**2, axis=1)[:, None]
        - 2.0 * vectors @ model.vectors.T
        + np.sum(model.vectors**2, axis=1)[None, :]
    )
    order = np.argsort(d2, axis=1, kind="stable")
    return model.is_human[order[:, : model.k]].mean(axis=1)


def score_backend(cfg: RunConfig, stream: str, backend: str, x: np.ndarray) -> np.ndarray:
    models = cfg.models_dir() / "backends"
    if backend in ("svm-linear", "svm-poly"):
        scaler = storage.read_scaler(models / f"{stream}_scaler.sfs")
        model = storage.read_svm(models / f"{stream}_{backend}.sfv")
        return backends.svm_score(backends.apply_minmax(x, scaler), model)
    if backend == "cosine":
        ref = storage.read_cosine(models / f"{stream}_cosine.sfc")
        norms = np.linalg.norm(x, axis=1) * np.linalg.norm(ref.mean)
        return (x @ ref.mean) / np.maximum(norms, 1e-300)
    if backend == "knn":
        model = storage.read_knn(models / f"{stream}_knn.sfk")
        return _knn_scores(backends.length_normalize(x), model)
    if backend in ("plda", "plda2"):
        name = f"{stream}_{backend}.sfl"
        model, enroll = storage.read_plda(models / name)
        return backends.PldaScorer(model, enrollment_mean=enroll).score(x)
    raise ConfigError(f"unknown backend {backend!r}")


def stage_score(cfg: RunConfig) -> None:
    _require_stage(cfg, "train")
    for split in ("dev", "eval"):
        for stream in ALL_STREAMS:
            vectors = load_stream_vectors(cfg, split, stream)
            ids = sorted(vectors)
            x = np.vstack([vectors[u] for u in ids])
            for backend in stream_backends(stream):
                values = score_backend(cfg, stream, backend, x)
                storage.write_scores(
                    cfg.scores_dir() / f"{split}_{stream}_{backend}.tsv",
                    dict(zip(ids, np.asarray(values, dtype=float).tolist())),
                )
    _write_stamp(cfg, "score")


def load_score_set(cfg: RunConfig, split: str, stream: str, backend: str) -> ScoreSet:
    path = cfg.scores_dir() / f"{split}_{stream}_{backend}.tsv"
    if not path.exists():
        raise MissingArtifactError(f"missing scores {path.name}: run `antispoof score`")
    return ScoreSet(f"{stream}+{backend}", storage.read_scores(path))


# ---------------------------------------------------------------------------
# stage: fuse


def stage_fuse(cfg: RunConfig) -> None:
    _require_stage(cfg, "score")
    trials = load_trials(cfg)
    dev_systems = [load_score_set(cfg, "dev", s, cfg.fusion_backend) for s in ALL_STREAMS]
    weights = tune_weights(dev_systems, trials.subset(split="dev"), cfg.fusion_grid_step)
    lines = [f"{stream}\t{w!r}" for stream, w in zip(ALL_STREAMS, weights.weights)]
    cfg.scores_dir().mkdir(parents=True, exist_ok=True)
    (cfg.scores_dir() / "fusion_weights.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for split in ("dev", "eval"):
        systems = [load_score_set(cfg, split, s, cfg.fusion_backend) for s in ALL_STREAMS]
        fused = fuse_scores(systems, weights, normalize=True)
        storage.write_scores(cfg.scores_dir() / f"{split}_fusion.tsv", fused.scores)
    _write_stamp(cfg, "fuse")


def load_fusion_weights(cfg: RunConfig) -> FusionWeights:
    path = cfg.scores_dir() / "fusion_weights.tsv"
    if not path.exists():
        raise MissingArtifactError("missing fusion weights: run `antispoof fuse`")
    values = [float(line.split("\t")[1]) for line in path.read_text().splitlines() if line]
    return FusionWeights(np.array(values))


# ---------------------------------------------------------------------------
# stage: eval (reports)


def _csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(eer: float) -> str:
    return f"{eer * 100:.4f}"


def report_dev_backends(cfg: RunConfig, trials: TrialSet) -> dict:
    dev = trials.subset(split="dev")
    table = {}
    for stream in ALL_STREAMS:
        row = {}
        for backend in stream_backends(stream):
            row[backend] = compute_eer(load_score_set(cfg, "dev", stream, backend), dev)
        table[stream] = row
    fused = ScoreSet("fusion", storage.read_scores(cfg.scores_dir() / "dev_fusion.tsv"))
    table["fusion"] = {cfg.fusion_backend: compute_eer(fused, dev)}
    rows = []
    for stream, row in table.items():
        rows.append([stream] + [_fmt(row[b]) if b in row else "" for b in BACKENDS])
    _csv(cfg.reports_dir() / "dev_backends.csv", ["system"] + list(BACKENDS), rows)
    return table


def report_eval_spoof_types(cfg: RunConfig, trials: TrialSet) -> dict:
    eval_trials = trials.subset(split="eval")
    types = eval_trials.spoof_types()
    types_sorted = sorted(types, key=lambda t: int(t[1:]))
    systems = {s: load_score_set(cfg, "eval", s, cfg.fusion_backend) for s in ALL_STREAMS}
    systems["fusion"] = ScoreSet("fusion", storage.read_scores(cfg.scores_dir() / "eval_fusion.tsv"))
    table = {}
    rows = []
    for name, scores in systems.items():
        per_type = {t: compute_eer(scores, eval_trials, spoof_type=t) for t in types_sorted}
        average = float(np.mean(list(per_type.values())))
        table[name] = {**per_type, "Average": average}
        rows.append([name] + [_fmt(per_type[t]) for t in types_sorted] + [_fmt(average)])
    _csv(cfg.reports_dir() / "eval_spoof_types.csv", ["system"] + types_sorted + ["Average"], rows)
    return table


def report_degree_sweep(cfg: RunConfig, trials: TrialSet) -> dict:
    """Polynomial-degree overfitting study on a deliberately small train set."""
    label_of = {e.utterance_id: e for e in trials.entries}
    vectors = load_stream_vectors(cfg, "train", cfg.sweep_stream)
    ids = sorted(vectors)
    is_human = np.array([label_of[u].label == HUMAN for u in ids])
    rng = np.random.default_rng(derived_seed(cfg.seed, "sweep"))
    human_ids = [u for u, h in zip(ids, is_human) if h]
    spoof_ids = [u for u, h in zip(ids, is_human) if not h]
    n = cfg.sweep_train_per_class
    picked = (list(rng.permutation(human_ids)[:n]) + list(rng.permutation(spoof_ids)[:n]))
    x = np.vstack([vectors[u] for u in picked])
    y = np.array([1.0 if label_of[u].label == HUMAN else -1.0 for u in picked])
    scaler = backends.fit_minmax(x)
    xs = backends.apply_minmax(x, scaler)

    eval_vectors = load_stream_vectors(cfg, "eval", cfg.sweep_stream)
    eval_ids = sorted(eval_vectors)
    xe = backends.apply_minmax(np.vstack([eval_vectors[u] for u in eval_ids]), scaler)
    eval_trials = trials.subset(split="eval")
    table = {}
    for degree in cfg.sweep_degrees:
        kernel = cfg.svm_kernel(degree, dim=xs.shape[1])
        model = backends.fit_svm(xs, y, kernel, c=cfg.svm_c, tol=cfg.svm_tol)
        values = backends.svm_score(xe, model)
        scores = ScoreSet(f"deg{degree}", dict(zip(eval_ids, np.asarray(values).tolist())))
        table[degree] = compute_eer(scores, eval_trials)
    _csv(cfg.reports_dir() / "svm_degree_sweep.csv",
         ["degree"] + [str(d) for d in cfg.sweep_degrees],
         [["eer"] + [_fmt(table[d]) for d in cfg.sweep_degrees]])
    return table


def _plda_fold_scores(cfg: RunConfig, x_train, channels, is_human, x_test) -> np.ndarray:
    model = backends.fit_plda(x_train, channels, r_v=cfg.plda_rank, iters=cfg.plda_iters,
                              seed=derived_seed(cfg.seed, "loso-plda") % 2**32)
    return backends.PldaScorer(model, human_enrollment=x_train[is_human]).score(x_test)


def _svm_fold_scores(cfg: RunConfig, x_train, y_train, x_test) -> np.ndarray:
    scaler = backends.fit_minmax(x_train)
    kernel = cfg.svm_kernel(1, dim=x_train.shape[1])
    model = backends.fit_svm(backends.apply_minmax(x_train, scaler), y_train,
                             kernel, c=cfg.svm_c, tol=cfg.svm_tol)
    return backends.svm_score(backends.apply_minmax(x_test, scaler), model)


def report_loso(cfg: RunConfig, trials: TrialSet) -> dict:
    """Known-vs-unknown attack robustness: one fold per held-out spoof type.

    Both back ends are trained twice per fold: without the held-out type
    (unknown condition) and with its train half added back (known
    condition); both are tested on the same held-out trials.
    """
    pool = TrialSet([e for e in trials.entries if e.split in ("train", "dev")])
    vectors = {**load_stream_vectors(cfg, "train", cfg.loso_stream),
               **load_stream_vectors(cfg, "dev", cfg.loso_stream)}
    folds = leave_one_spoof_out(pool, seed=cfg.seed)
    table = {}
    rows = []
    for fold in folds:
        held = [e for e in fold.test.entries if e.label != HUMAN]
        rng = np.random.default_rng(derived_seed(cfg.seed, "loso-half", fold.held_out_type))
        order = rng.permutation(len(held))
        half = len(held) // 2
        known_extra = [held[i] for i in sorted(order[:half])]
        test_entries = [e for e in fold.test.entries if e.label == HUMAN] + \
                       [held[i] for i in sorted(order[half:])]
        test_trials = TrialSet(test_entries)
        x_test = np.vstack([vectors[e.utterance_id] for e in test_entries])
        test_ids = [e.utterance_id for e in test_entries]

        results = {}
        for condition, extra in (("unknown", []), ("known", known_extra)):
            entries = fold.train.entries + extra
            x_train = np.vstack([vectors[e.utterance_id] for e in entries])
            is_human = np.array([e.label == HUMAN for e in entries])
            channels = np.array([e.spoof_type if e.label != HUMAN else "human" for e in entries])
            y = np.where(is_human, 1.0, -1.0)
            plda_scores = _plda_fold_scores(cfg, x_train, channels, is_human, x_test)
            svm_scores = _svm_fold_scores(cfg, x_train, y, x_test)
            results[f"plda_{condition}"] = compute_eer(
                ScoreSet("plda", dict(zip(test_ids, plda_scores.tolist()))), test_trials)
            results[f"svm_{condition}"] = compute_eer(
                ScoreSet("svm", dict(zip(test_ids, svm_scores.tolist()))), test_trials)
        results["plda_degradation"] = results["plda_unknown"] - results["plda_known"]
        results["svm_degradation"] = results["svm_unknown"] - results["svm_known"]
        table[fold.held_out_type] = results
        rows.append([fold.held_out_type] + [_fmt(results[k]) for k in
                    ("plda_known", "plda_unknown", "svm_known", "svm_unknown",
                     "plda_degradation", "svm_degradation")])
    _csv(cfg.reports_dir() / "unseen_attack_folds.csv",
         ["held_out", "plda_known", "plda_unknown", "svm_known", "svm_unknown",
          "plda_degradation", "svm_degradation"], rows)
    return table


def stage_eval(cfg: RunConfig) -> dict:
    _require_stage(cfg, "fuse")
    trials = load_trials(cfg)
    dev_table = report_dev_backends(cfg, trials)
    type_table = report_eval_spoof_types(cfg, trials)
    sweep_table = report_degree_sweep(cfg, trials)
    loso_table = report_loso(cfg, trials)

    lines = ["anti-spoofing evaluation report", "=" * 32, ""]
    lines.append("run configuration:")
    lines.extend("  " + ln for ln in cfg.manifest_text().splitlines())
    lines.append("")
    lines.append("development EER (%) per stream and back end:")
    header = f"  {'system':14s}" + "".join(f"{b:>12s}" for b in BACKENDS)
    lines.append(header)
    for stream, row in dev_table.items():
        cells = "".join(f"{_fmt(row[b]) if b in row else '-':>12s}" for b in BACKENDS)
        lines.append(f"  {stream:14s}" + cells)
    lines.append("")
    lines.append(f"eval EER (%) per spoofing condition ({cfg.fusion_backend} back end):")
    types_sorted = sorted(next(iter(type_table.values())).keys() - {"Average"},
                          key=lambda t: int(t[1:]))
    lines.append(f"  {'system':14s}" + "".join(f"{t:>9s}" for t in types_sorted) + f"{'Avg':>9s}")
    for name, row in type_table.items():
        cells = "".join(f"{_fmt(row[t]):>9s}" for t in types_sorted)
        lines.append(f"  {name:14s}" + cells + f"{_fmt(row['Average']):>9s}")
    lines.append("")
    lines.append(f"polynomial degree sweep ({cfg.sweep_stream}, "
                 f"{cfg.sweep_train_per_class}/class train subset, eval EER %):")
    lines.append("  " + "".join(f"{d:>8d}" for d in cfg.sweep_degrees))
    lines.append("  " + "".join(f"{_fmt(sweep_table[d]):>8s}" for d in cfg.sweep_degrees))
    lines.append("")
    lines.append(f"held-out spoof-type folds ({cfg.loso_stream}; EER %):")
    lines.append(f"  {'held':6s}{'plda_kn':>9s}{'plda_unk':>9s}{'svm_kn':>9s}{'svm_unk':>9s}")
    for held, row in loso_table.items():
        lines.append(f"  {held:6s}{_fmt(row['plda_known']):>9s}{_fmt(row['plda_unknown']):>9s}"
                     f"{_fmt(row['svm_known']):>9s}{_fmt(row['svm_unknown']):>9s}")
    lines.append("")
    (cfg.reports_dir() / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_stamp(cfg, "eval")
    return {"dev": dev_table, "types": type_table, "sweep": sweep_table, "loso": loso_table}


def run_all(cfg: RunConfig) -> dict:
    stage_corpus(cfg)
    stage_extract(cfg)
    stage_train(cfg)
    stage_score(cfg)
    stage_fuse(cfg)
    return stage_eval(cfg)
