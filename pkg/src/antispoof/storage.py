"""Binary artifact formats and score-file I/O.

Every model artifact is a little-endian tagged container with a 4-byte
magic. Feature/vector dumps use the SFGM matrix format: magic, version,
rows, cols as u32, then row-major float32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .backends import CosineReference, KnnModel, MinMaxScaler, PldaModel, SvmKernel, SvmModel
from .gmm import GmmModel
from .ivector import PcaModel, TotalVariabilityModel

MATRIX_MAGIC = b"SFGM"
MATRIX_VERSION = 1


class StorageError(ValueError):
    """Raised on malformed artifact files."""


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise StorageError("truncated artifact file")
    return data


def _expect_magic(fh, magic: bytes, path) -> None:
    found = _read_exact(fh, 4)
    if found != magic:
        raise StorageError(f"{path}: bad magic {found!r}, expected {magic!r}")


def write_matrix(path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<III", MATRIX_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, MATRIX_MAGIC, path)
        version, rows, cols = struct.unpack("<III", _read_exact(fh, 12))
        if version != MATRIX_VERSION:
            raise StorageError(f"{path}: unsupported matrix version {version}")
        data = np.frombuffer(_read_exact(fh, 4 * rows * cols), dtype="<f4")
    return data.reshape(rows, cols).astype(np.float64)


def _write_f64(fh, arr) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(fh, shape) -> np.ndarray:
    count = int(np.prod(shape))
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.reshape(shape).copy()


def write_gmm(path, model: GmmModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFG1")
        fh.write(struct.pack("<II", model.n_components, model.dim))
        _write_f64(fh, model.weights)
        _write_f64(fh, model.means)
        _write_f64(fh, model.variances)


def read_gmm(path) -> GmmModel:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFG1", path)
        c, dim = struct.unpack("<II", _read_exact(fh, 8))
        weights = _read_f64(fh, (c,))
        means = _read_f64(fh, (c, dim))
        variances = _read_f64(fh, (c, dim))
    return GmmModel(weights, means, variances)


def write_tv(path, model: TotalVariabilityModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFT1")
        fh.write(struct.pack("<III", model.ubm.n_components, model.ubm.dim, model.rank))
        _write_f64(fh, model.t)


def read_tv(path, ubm: GmmModel) -> TotalVariabilityModel:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFT1", path)
        c, dim, rank = struct.unpack("<III", _read_exact(fh, 12))
        if (c, dim) != (ubm.n_components, ubm.dim):
            raise StorageError(f"{path}: TV model was trained on a different UBM shape")
        t = _read_f64(fh, (c * dim, rank))
    return TotalVariabilityModel(t, ubm)


def write_pca(path, model: PcaModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFP1")
        fh.write(struct.pack("<II", model.k, len(model.mean)))
        _write_f64(fh, model.mean)
        _write_f64(fh, model.components)


def read_pca(path) -> PcaModel:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFP1", path)
        k, dim = struct.unpack("<II", _read_exact(fh, 8))
        mean = _read_f64(fh, (dim,))
        components = _read_f64(fh, (k, dim))
    return PcaModel(mean, components)


def write_scaler(path, scaler: MinMaxScaler) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFS1")
        fh.write(struct.pack("<I", len(scaler.mins)))
        _write_f64(fh, scaler.mins)
        _write_f64(fh, scaler.maxs)


def read_scaler(path) -> MinMaxScaler:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFS1", path)
        (dim,) = struct.unpack("<I", _read_exact(fh, 4))
        return MinMaxScaler(_read_f64(fh, (dim,)), _read_f64(fh, (dim,)))


def write_cosine(path, ref: CosineReference) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFC1")
        fh.write(struct.pack("<I", len(ref.mean)))
        _write_f64(fh, ref.mean)


def read_cosine(path) -> CosineReference:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFC1", path)
        (dim,) = struct.unpack("<I", _read_exact(fh, 4))
        return CosineReference(_read_f64(fh, (dim,)))


def write_knn(path, model: KnnModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFK1")
        fh.write(struct.pack("<III", len(model.vectors), model.vectors.shape[1], model.k))
        _write_f64(fh, model.vectors)
        fh.write(model.is_human.astype("u1").tobytes())


def read_knn(path) -> KnnModel:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFK1", path)
        n, dim, k = struct.unpack("<III", _read_exact(fh, 12))
        vectors = _read_f64(fh, (n, dim))
        labels = np.frombuffer(_read_exact(fh, n), dtype="u1").astype(bool)
    return KnnModel(vectors, labels, k)


def write_plda(path, model: PldaModel, enrollment_mean: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    raw_mean = model.raw_mean if model.raw_mean is not None else np.zeros(0)
    with open(path, "wb") as fh:
        fh.write(b"SFL1")
        fh.write(
            struct.pack(
                "<IIIBB",
                model.dim,
                model.v.shape[1],
                model.u.shape[1],
                int(model.length_norm),
                int(len(raw_mean) > 0),
            )
        )
        _write_f64(fh, model.mean)
        _write_f64(fh, model.v)
        _write_f64(fh, model.u)
        _write_f64(fh, model.psi)
        if len(raw_mean):
            _write_f64(fh, raw_mean)
        _write_f64(fh, enrollment_mean)


def read_plda(path) -> tuple[PldaModel, np.ndarray]:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFL1", path)
        dim, r_v, r_u, length_norm, has_raw = struct.unpack("<IIIBB", _read_exact(fh, 14))
        mean = _read_f64(fh, (dim,))
        v = _read_f64(fh, (dim, r_v))
        u = _read_f64(fh, (dim, r_u))
        psi = _read_f64(fh, (dim,))
        raw_mean = _read_f64(fh, (dim,)) if has_raw else None
        enrollment = _read_f64(fh, (dim,))
    model = PldaModel(mean, v, u, psi, bool(length_norm), raw_mean)
    return model, enrollment


_KERNEL_CODES = {"linear": 0, "poly": 1}
_KERNEL_NAMES = {v: k for k, v in _KERNEL_CODES.items()}


def write_svm(path, model: SvmModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"SFV1")
        fh.write(
            struct.pack(
                "<BIddIId",
                _KERNEL_CODES[model.kernel.kind],
                model.kernel.degree,
                model.kernel.gain,
                model.kernel.coef0,
                len(model.support_vectors),
                model.support_vectors.shape[1],
                model.bias,
            )
        )
        _write_f64(fh, model.support_vectors)
        _write_f64(fh, model.dual_coef)


def read_svm(path) -> SvmModel:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFV1", path)
        code, degree, gain, coef0, n_sv, dim, bias = struct.unpack(
            "<BIddIId", _read_exact(fh, struct.calcsize("<BIddIId"))
        )
        sv = _read_f64(fh, (n_sv, dim))
        dual = _read_f64(fh, (n_sv,))
    return SvmModel(SvmKernel(_KERNEL_NAMES[code], degree, gain, coef0), sv, dual, bias)


# ---------------------------------------------------------------------------
# score files and indexed feature dumps


def write_scores(path, scores: dict[str, float]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{utt}\t{scores[utt]!r}" for utt in sorted(scores)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        utt, value = line.split("\t")
        out[utt] = float(value)
    return out


def write_indexed_matrix(path, ids: list[str], matrices: list[np.ndarray]) -> None:
    """Stack per-utterance matrices into one dump plus a row-range index."""
    if len(ids) != len(matrices):
        raise StorageError("id/matrix count mismatch")
    stacked = np.vstack(matrices) if matrices else np.zeros((0, 0))
    write_matrix(path, stacked)
    lines = []
    start = 0
    for utt, mat in zip(ids, matrices):
        rows = np.atleast_2d(mat).shape[0]
        lines.append(f"{utt}\t{start}\t{rows}")
        start += rows
    Path(str(path) + ".idx").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_indexed_matrix(path) -> dict[str, np.ndarray]:
    stacked = read_matrix(path)
    out = {}
    for line in Path(str(path) + ".idx").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        utt, start, rows = line.split("\t")
        out[utt] = stacked[int(start) : int(start) + int(rows)]
    return out
