"""Dataset acquisition, IDX parsing, caching, and presentation order.

The on-disk interchange format is IDX: a big-endian header of a 4-byte magic
(two zero bytes, a dtype code, the rank) followed by one u32 per dimension,
then the raw payload. Only the two classic variants are accepted here,
``0x00000803`` for u8 image stacks and ``0x00000801`` for u8 label vectors.
Gzip containers are detected by signature and unwrapped transparently.

Downloads are verified twice: against the published md5 of each archive where
one is known, and against a sha256 recorded in the cache manifest on first
fetch, which every later load re-checks. The manifest also stores the target
used by sum normalization so that a resumed or re-run experiment normalizes
identically.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import PURPOSE_SHUFFLE, RngStream

logger = logging.getLogger(__name__)

MAGIC_IMAGES = 0x00000803
MAGIC_LABELS = 0x00000801

_GZIP_SIGNATURE = b"\x1f\x8b"
_DOWNLOAD_TIMEOUT_S = 60.0


class DataError(Exception):
    """Dataset acquisition or integrity failure."""


class IdxFormatError(DataError):
    """Malformed IDX bytes. ``offset`` points at the violation."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def load_idx(data: bytes) -> np.ndarray:
    """Parse IDX bytes into a u8 array (labels 1-D, images 3-D)."""
    if len(data) < 4:
        raise IdxFormatError("file shorter than the 4-byte magic", offset=0)
    magic = int.from_bytes(data[:4], "big")
    if magic == MAGIC_IMAGES:
        ndim = 3
    elif magic == MAGIC_LABELS:
        ndim = 1
    else:
        raise IdxFormatError(f"unknown magic 0x{magic:08x}", offset=0)
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxFormatError(
            f"header truncated: need {header_end} bytes for {ndim} dimensions",
            offset=len(data),
        )
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(data) - header_end
    if payload < expected:
        raise IdxFormatError(
            f"payload truncated: dimensions {dims} need {expected} bytes, found {payload}",
            offset=len(data),
        )
    if payload > expected:
        raise IdxFormatError(
            f"{payload - expected} trailing bytes after {expected}-byte payload",
            offset=header_end + expected,
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_end).reshape(dims)


def dump_idx(array: np.ndarray) -> bytes:
    """Serialize a u8 array of rank 1 or 3 to IDX bytes (load_idx inverse)."""
    if array.dtype != np.uint8:
        raise IdxFormatError(f"only u8 arrays serialize to IDX, got {array.dtype}", offset=0)
    if array.ndim == 3:
        magic = MAGIC_IMAGES
    elif array.ndim == 1:
        magic = MAGIC_LABELS
    else:
        raise IdxFormatError(f"rank {array.ndim} has no IDX form here", offset=0)
    header = magic.to_bytes(4, "big") + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def _maybe_decompress(data: bytes) -> bytes:
    if data[:2] == _GZIP_SIGNATURE:
        try:
            return gzip.decompress(data)
        except (OSError, EOFError) as err:
            raise DataError(f"gzip container is corrupt: {err}") from err
    return data


@dataclass(frozen=True)
class IdxFile:
    """One downloadable archive: its role, mirror URLs, and known md5."""

    role: str  # train-images | train-labels | test-images | test-labels
    filename: str
    urls: tuple[str, ...]
    md5: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    files: tuple[IdxFile, ...]
    normalize: bool = False


def _standard_files(base_urls: tuple[str, ...], md5s: dict[str, str]) -> tuple[IdxFile, ...]:
    roles = {
        "train-images": "train-images-idx3-ubyte.gz",
        "train-labels": "train-labels-idx1-ubyte.gz",
        "test-images": "t10k-images-idx3-ubyte.gz",
        "test-labels": "t10k-labels-idx1-ubyte.gz",
    }
    return tuple(
        IdxFile(
            role=role,
            filename=fn,
            urls=tuple(base + fn for base in base_urls),
            md5=md5s.get(role),
        )
        for role, fn in roles.items()
    )


MNIST = DatasetManifest(
    name="mnist",
    files=_standard_files(
        (
            "https://ossci-datasets.s3.amazonaws.com/mnist/",
            "http://yann.lecun.com/exdb/mnist/",
        ),
        {
            "train-images": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
            "train-labels": "d53e105ee54ea40749a09fcbcd1e9432",
            "test-images": "9fb629c4189551a2d022fa330f9573f3",
            "test-labels": "ec29112dd5afa0611ce80d1b7f02629c",
        },
    ),
)

FASHION_MNIST = DatasetManifest(
    name="fashion-mnist",
    normalize=True,
    files=_standard_files(
        ("http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",),
        {
            "train-images": "8d4fb7e6c68d591d4c3dfef9ec88bf0d",
            "train-labels": "25c81989df183df01b3e8a0aad5dffbe",
            "test-images": "bef4ecab320f06d8554ea6380940ec79",
            "test-labels": "bb300cfdad3c16e7a12a480ee83cd310",
        },
    ),
)

MANIFESTS = {m.name: m for m in (MNIST, FASHION_MNIST)}


@dataclass
class Dataset:
    """One split in memory: images as float64 intensities, labels as int64."""

    images: np.ndarray
    labels: np.ndarray
    name: str = ""
    split: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.name} {self.split}: {self.images.shape[0]} images but "
                f"{self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


def _cache_manifest_path(cache_dir: Path, name: str) -> Path:
    return cache_dir / name / "manifest.json"


def _read_cache_manifest(cache_dir: Path, name: str) -> dict:
    path = _cache_manifest_path(cache_dir, name)
    if path.exists():
        return json.loads(path.read_text())
    return {"files": {}, "target_sum": None}


def _write_cache_manifest(cache_dir: Path, name: str, manifest: dict) -> None:
    path = _cache_manifest_path(cache_dir, name)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(path)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _verify_bytes(data: bytes, file: IdxFile, pinned_sha256: str | None, origin: str) -> str:
    if file.md5 is not None:
        got = hashlib.md5(data).hexdigest()
        if got != file.md5:
            raise DataError(
                f"{origin}: md5 mismatch for {file.filename}: expected {file.md5}, got {got}"
            )
    digest = _sha256(data)
    if pinned_sha256 is not None and digest != pinned_sha256:
        raise DataError(
            f"{origin}: sha256 mismatch for {file.filename}: cache manifest pinned "
            f"{pinned_sha256}, got {digest}"
        )
    return digest


def fetch_dataset(manifest: DatasetManifest, cache_dir: str | Path) -> dict[str, Path]:
    """Download missing archives into the cache, verify, pin digests.

    Returns role -> path for all four files. Already cached files are
    re-verified against their pinned sha256 rather than re-downloaded.
    """
    cache_dir = Path(cache_dir)
    dataset_dir = cache_dir / manifest.name
    dataset_dir.mkdir(parents=True, exist_ok=True)
    cache = _read_cache_manifest(cache_dir, manifest.name)
    paths: dict[str, Path] = {}
    for file in manifest.files:
        target = dataset_dir / file.filename
        pinned = cache["files"].get(file.filename, {}).get("sha256")
        if target.exists():
            _verify_bytes(target.read_bytes(), file, pinned, origin=str(target))
            paths[file.role] = target
            continue
        data = None
        errors = []
        for url in file.urls:
            try:
                logger.info("fetching %s", url)
                with urllib.request.urlopen(url, timeout=_DOWNLOAD_TIMEOUT_S) as resp:
                    data = resp.read()
                break
            except (urllib.error.URLError, OSError, TimeoutError) as err:
                errors.append(f"{url}: {err}")
        if data is None:
            raise DataError(
                f"could not fetch {file.filename}; tried: " + "; ".join(errors)
            )
        digest = _verify_bytes(data, file, pinned, origin="download")
        target.write_bytes(data)
        cache["files"][file.filename] = {"sha256": digest, "size": len(data)}
        paths[file.role] = target
    _write_cache_manifest(cache_dir, manifest.name, cache)
    return paths


def _resolve_local(data_dir: Path, file: IdxFile) -> Path | None:
    for candidate in (file.filename, file.filename.removesuffix(".gz")):
        path = data_dir / candidate
        if path.exists():
            return path
    return None


def load_idx_split(images_path: str | Path, labels_path: str | Path,
                   name: str = "", split: str = "") -> Dataset:
    """Load one (images, labels) pair of IDX files without integrity checks."""
    images = load_idx(_maybe_decompress(Path(images_path).read_bytes()))
    labels = load_idx(_maybe_decompress(Path(labels_path).read_bytes()))
    if images.ndim != 3:
        raise DataError(f"{images_path} does not contain an image stack")
    if labels.ndim != 1:
        raise DataError(f"{labels_path} does not contain a label vector")
    return Dataset(
        images=images.astype(np.float64),
        labels=labels.astype(np.int64),
        name=name,
        split=split,
    )


def normalize_sum(pixels: np.ndarray, target: float) -> np.ndarray:
    """Scale an image so its pixel sum hits ``target``, clamped to [0, 255].

    All-zero images pass through unchanged; the caller decides how loudly to
    report them.
    """
    total = pixels.sum()
    if total <= 0.0:
        return pixels
    return np.clip(pixels * (target / total), 0.0, 255.0)


def _normalize_dataset(ds: Dataset, target: float) -> None:
    sums = ds.images.sum(axis=(1, 2))
    zero = sums <= 0.0
    if zero.any():
        logger.warning(
            "%s %s: %d all-zero images left unnormalized", ds.name, ds.split, int(zero.sum())
        )
    live = ~zero
    factors = np.ones_like(sums)
    factors[live] = target / sums[live]
    ds.images *= factors[:, None, None]
    np.clip(ds.images, 0.0, 255.0, out=ds.images)


def load_dataset(
    name: str,
    cache_dir: str | Path,
    data_dir: str | Path | None = None,
) -> tuple[Dataset, Dataset]:
    """Load (train, test) for a named dataset from cache or a local directory.

    Local files must carry the canonical filenames (gzipped or not) and are
    verified against the published md5 the same way downloads are. Sum
    normalization, where the dataset calls for it, targets the mean training
    pixel sum; the first load computes and persists it so that later loads
    and resumed runs normalize identically.
    """
    if name not in MANIFESTS:
        raise DataError(f"unknown dataset {name!r}; expected one of {sorted(MANIFESTS)}")
    manifest = MANIFESTS[name]
    cache_dir = Path(cache_dir)

    paths: dict[str, Path] = {}
    if data_dir is not None:
        data_dir = Path(data_dir)
        for file in manifest.files:
            path = _resolve_local(data_dir, file)
            if path is None:
                raise DataError(f"{file.filename} (or its unzipped form) not found in {data_dir}")
            raw = path.read_bytes()
            if raw[:2] == _GZIP_SIGNATURE:
                # md5s are published for the gzip containers
                _verify_bytes(raw, file, None, origin=str(path))
            paths[file.role] = path
    else:
        dataset_dir = cache_dir / manifest.name
        cache = _read_cache_manifest(cache_dir, manifest.name)
        for file in manifest.files:
            path = dataset_dir / file.filename
            if not path.exists():
                raise DataError(
                    f"{path} is missing; run the fetch command or pass a data directory"
                )
            pinned = cache["files"].get(file.filename, {}).get("sha256")
            _verify_bytes(path.read_bytes(), file, pinned, origin=str(path))
            paths[file.role] = path

    train = load_idx_split(paths["train-images"], paths["train-labels"], name, "train")
    test = load_idx_split(paths["test-images"], paths["test-labels"], name, "test")

    if manifest.normalize:
        cache = _read_cache_manifest(cache_dir, manifest.name)
        target = cache.get("target_sum")
        if target is None:
            target = float(train.images.sum(axis=(1, 2)).mean())
            cache["target_sum"] = target
            if data_dir is None:
                _write_cache_manifest(cache_dir, manifest.name, cache)
            logger.info("%s: normalization target %.3f from training split", name, target)
        _normalize_dataset(train, target)
        _normalize_dataset(test, target)

    return train, test


def epoch_order(n_samples: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic presentation order for one epoch."""
    gen = RngStream(seed, PURPOSE_SHUFFLE, sample_id=0, extra=epoch).generator()
    return gen.permutation(n_samples)
