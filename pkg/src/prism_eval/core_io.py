"""Domain types, binary feature-file formats, and manifest handling.

Two binary formats are defined here and shared by every other module:

PRSA (raw activation stacks)::

    magic "PRSA" | version u32 | B u32 | B x { H u32, W u32, C u32 }
    | B row-major little-endian float32 payloads (H*W*C each)

PRSF (flat embedding sets)::

    magic "PRSF" | version u32 | N u32 | D u32
    | N*D row-major little-endian float32 values

Both formats are fixed little-endian regardless of host byte order.

Manifests are line-oriented UTF-8 text, one record per line as
whitespace-separated ``key=value`` pairs (paths therefore must not contain
whitespace).  Recognized record keys: ``source``, ``target``, ``label``,
``weight``, ``daz``, ``del``, ``drad``, ``path``.  Lines starting with ``#``
are comments; lines starting with ``@`` set manifest attributes
(``@split train``, ``@dataset gso``).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PRSA_MAGIC = b"PRSA"
PRSF_MAGIC = b"PRSF"
FORMAT_VERSION = 1

VALID_LABELS = ("ground_truth", "positive", "negative_inpaint", "negative_pose")
VALID_SPLITS = ("train", "val", "test")
VALID_ROLES = ("generated", "anchor", "positive", "negative")

UNIT_NORM_TOL = 1e-5

_MAX_U32 = 0xFFFFFFFF


class FormatError(ValueError):
    """File does not follow the declared binary or text layout."""


class CorruptionError(ValueError):
    """Header and payload disagree (truncated or oversized file)."""


class DataError(ValueError):
    """Values violate a domain invariant (non-finite, out of range)."""


class ContractError(ValueError):
    """An operation was called with inputs outside its stated contract."""


def normalize_azimuth(deg: float) -> float:
    """Wrap an absolute azimuth into [0, 360)."""
    a = math.fmod(float(deg), 360.0)
    if a < 0.0:
        a += 360.0
    return 0.0 if a == 360.0 else a


def normalize_relative_azimuth(deg: float) -> float:
    """Wrap a signed azimuth delta into (-180, 180]."""
    a = math.fmod(float(deg), 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


@dataclass(frozen=True)
class CameraPose:
    """Absolute camera placement on the viewing sphere."""

    azimuth_deg: float
    elevation_deg: float
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise DataError(f"camera radius must be positive, got {self.radius}")
        object.__setattr__(self, "azimuth_deg", normalize_azimuth(self.azimuth_deg))
        object.__setattr__(self, "elevation_deg", float(self.elevation_deg))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class RelativePose:
    """Signed source-to-target camera delta."""

    d_azimuth_deg: float = 0.0
    d_elevation_deg: float = 0.0
    d_radius: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "d_azimuth_deg", normalize_relative_azimuth(self.d_azimuth_deg)
        )
        object.__setattr__(self, "d_elevation_deg", float(self.d_elevation_deg))
        object.__setattr__(self, "d_radius", float(self.d_radius))

    def key(self, digits: int = 6) -> tuple[float, float, float]:
        """Rounded tuple used to group records sharing one camera delta."""
        return (
            round(self.d_azimuth_deg, digits),
            round(self.d_elevation_deg, digits),
            round(self.d_radius, digits),
        )


@dataclass(frozen=True)
class ActivationStack:
    """Ordered per-block activation maps for one triplet.

    Each block is an (H, W, C) float32 array; blocks may differ in shape.
    """

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.blocks) < 1:
            raise DataError("activation stack needs at least one block")
        frozen = []
        for i, blk in enumerate(self.blocks):
            arr = np.asarray(blk, dtype=np.float32)
            if arr.ndim != 3 or min(arr.shape) < 1:
                raise DataError(
                    f"block {i} must be (H, W, C) with positive dims, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise DataError(f"block {i} contains non-finite values")
            arr = arr.copy() if arr.flags.writeable else arr
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "blocks", tuple(frozen))

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def shapes(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(b.shape for b in self.blocks)

    @property
    def total_channels(self) -> int:
        return sum(b.shape[2] for b in self.blocks)


@dataclass(frozen=True)
class FeatureVector:
    """Flat float32 feature vector, optionally certified unit-norm."""

    values: np.ndarray
    unit_norm: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if arr.size < 1:
            raise DataError("feature vector must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise DataError("feature vector contains non-finite values")
        if self.unit_norm:
            nrm = float(np.linalg.norm(arr.astype(np.float64)))
            if abs(nrm - 1.0) > UNIT_NORM_TOL:
                raise DataError(f"unit_norm set but ||v||={nrm:.8f}")
        arr = arr.copy() if arr.flags.writeable else arr
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class EmbeddingSet:
    """Row-major (N, D) float32 embedding matrix with a role tag."""

    rows: np.ndarray
    role: str = "generated"

    def __post_init__(self) -> None:
        arr = np.asarray(self.rows, dtype=np.float32)
        if arr.ndim != 2:
            raise DataError(f"embedding set must be (N, D), got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise DataError("embedding dim must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise DataError("embedding set contains non-finite values")
        if self.role not in VALID_ROLES:
            raise DataError(f"unknown role {self.role!r}; expected one of {VALID_ROLES}")
        arr = arr.copy() if arr.flags.writeable else arr
        arr.flags.writeable = False
        object.__setattr__(self, "rows", arr)

    @property
    def count(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class TripletRecord:
    """One (source, target, relative pose) bookkeeping entry."""

    source_id: str
    target_id: str
    pose: RelativePose
    label: str
    weight: float = 1.0
    activation_path: str = ""

    def __post_init__(self) -> None:
        if self.label not in VALID_LABELS:
            raise DataError(f"unknown label {self.label!r}; expected one of {VALID_LABELS}")
        if not 0.0 <= self.weight <= 1.0:
            raise DataError(f"weight must be in [0, 1], got {self.weight}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.source_id, self.target_id, self.label)


@dataclass
class Manifest:
    """A set of triplet records belonging to one dataset split."""

    records: list[TripletRecord] = field(default_factory=list)
    split: str = "train"
    dataset: str = ""

    def __post_init__(self) -> None:
        if self.split not in VALID_SPLITS:
            raise DataError(f"unknown split {self.split!r}; expected one of {VALID_SPLITS}")
        seen: set[tuple[str, str, str]] = set()
        for rec in self.records:
            if rec.key in seen:
                raise DataError(f"duplicate record key {rec.key}")
            seen.add(rec.key)

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# PRSA: raw activation stacks


def write_activation_file(stack: ActivationStack, path: str | Path) -> None:
    """Serialize an activation stack to a PRSA file (bit-exact layout)."""
    with open(path, "wb") as fh:
        fh.write(PRSA_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, stack.block_count))
        for blk in stack.blocks:
            h, w, c = blk.shape
            if max(h, w, c) > _MAX_U32:
                raise DataError(f"block shape {blk.shape} exceeds u32 header range")
            fh.write(struct.pack("<III", h, w, c))
        for blk in stack.blocks:
            fh.write(np.ascontiguousarray(blk, dtype="<f4").tobytes())


def read_activation_header(path: str | Path) -> list[tuple[int, int, int]]:
    """Read only the PRSA block table; cheap shape inspection."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != PRSA_MAGIC:
            raise FormatError(f"{path}: not a PRSA file (bad magic)")
        version, count = struct.unpack("<II", head[4:12])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported PRSA version {version}")
        if count < 1:
            raise FormatError(f"{path}: block count must be >= 1")
        table = fh.read(12 * count)
        if len(table) < 12 * count:
            raise CorruptionError(f"{path}: truncated block table")
    shapes = []
    for b in range(count):
        h, w, c = struct.unpack_from("<III", table, 12 * b)
        if min(h, w, c) < 1:
            raise FormatError(f"{path}: block {b} has a zero dimension")
        shapes.append((h, w, c))
    return shapes


def read_activation_file(path: str | Path) -> ActivationStack:
    """Parse a PRSA file back into an ActivationStack."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != PRSA_MAGIC:
        raise FormatError(f"{path}: not a PRSA file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported PRSA version {version}")
    if count < 1:
        raise FormatError(f"{path}: block count must be >= 1")
    off = 12
    if len(data) < off + 12 * count:
        raise CorruptionError(f"{path}: truncated block table")
    shapes = []
    for b in range(count):
        h, w, c = struct.unpack_from("<III", data, off)
        off += 12
        if min(h, w, c) < 1:
            raise FormatError(f"{path}: block {b} has a zero dimension")
        shapes.append((h, w, c))
    blocks = []
    for shape in shapes:
        n = shape[0] * shape[1] * shape[2]
        end = off + 4 * n
        if end > len(data):
            raise CorruptionError(f"{path}: truncated payload")
        blocks.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape))
        off = end
    if off != len(data):
        raise CorruptionError(f"{path}: {len(data) - off} unexpected trailing bytes")
    try:
        return ActivationStack(tuple(blocks))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# PRSF: flat embedding sets


def write_embedding_file(emb: EmbeddingSet, path: str | Path) -> None:
    """Serialize an embedding set to a PRSF file (bit-exact layout)."""
    n, d = emb.rows.shape
    if n > _MAX_U32 or d > _MAX_U32:
        raise DataError(f"embedding shape ({n}, {d}) exceeds u32 header range")
    with open(path, "wb") as fh:
        fh.write(PRSF_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, n, d))
        fh.write(np.ascontiguousarray(emb.rows, dtype="<f4").tobytes())


def read_embedding_header(path: str | Path) -> tuple[int, int]:
    """Read only the PRSF (N, D) header."""
    with open(path, "rb") as fh:
        head = fh.read(16)
    if len(head) < 16 or head[:4] != PRSF_MAGIC:
        raise FormatError(f"{path}: not a PRSF file (bad magic)")
    version, n, d = struct.unpack("<III", head[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported PRSF version {version}")
    if d < 1:
        raise FormatError(f"{path}: embedding dim must be >= 1")
    return n, d


def read_embedding_file(path: str | Path, role: str = "generated") -> EmbeddingSet:
    """Parse a PRSF file back into an EmbeddingSet."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != PRSF_MAGIC:
        raise FormatError(f"{path}: not a PRSF file (bad magic)")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported PRSF version {version}")
    if d < 1:
        raise FormatError(f"{path}: embedding dim must be >= 1")
    expect = 16 + 4 * n * d
    if len(data) < expect:
        raise CorruptionError(f"{path}: truncated payload")
    if len(data) > expect:
        raise CorruptionError(f"{path}: {len(data) - expect} unexpected trailing bytes")
    rows = np.frombuffer(data, dtype="<f4", count=n * d, offset=16).reshape(n, d)
    try:
        return EmbeddingSet(rows, role=role)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Manifests

_RECORD_KEYS = ("source", "target", "label", "weight", "daz", "del", "drad", "path")


def _parse_float(value: str, where: str, key: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise FormatError(f"{where}: {key}={value!r} is not a number") from None
    if not math.isfinite(out):
        raise FormatError(f"{where}: {key}={value!r} must be finite")
    return out


def load_manifest(path: str | Path) -> Manifest:
    """Parse a manifest text file; poses are normalized on load."""
    records: list[TripletRecord] = []
    seen: set[tuple[str, str, str]] = set()
    split = "train"
    dataset = ""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            where = f"{path}:{lineno}"
            if not line or line.startswith("#"):
                continue
            if line.startswith("@"):
                parts = line[1:].split(None, 1)
                if len(parts) != 2:
                    raise FormatError(f"{where}: directive needs a value: {line!r}")
                name, value = parts[0], parts[1].strip()
                if name == "split":
                    if value not in VALID_SPLITS:
                        raise FormatError(f"{where}: unknown split {value!r}")
                    split = value
                elif name == "dataset":
                    dataset = value
                else:
                    raise FormatError(f"{where}: unknown directive @{name}")
                continue
            fields: dict[str, str] = {}
            for token in line.split():
                key, sep, value = token.partition("=")
                if not sep or not key:
                    raise FormatError(f"{where}: expected key=value, got {token!r}")
                if key not in _RECORD_KEYS:
                    raise FormatError(f"{where}: unknown key {key!r}")
                if key in fields:
                    raise FormatError(f"{where}: repeated key {key!r}")
                fields[key] = value
            for required in ("source", "target", "label"):
                if required not in fields:
                    raise FormatError(f"{where}: missing required key {required!r}")
            if fields["label"] not in VALID_LABELS:
                raise FormatError(f"{where}: unknown label {fields['label']!r}")
            weight = _parse_float(fields.get("weight", "1.0"), where, "weight")
            if not 0.0 <= weight <= 1.0:
                raise FormatError(f"{where}: weight {weight} out of range [0, 1]")
            pose = RelativePose(
                _parse_float(fields.get("daz", "0"), where, "daz"),
                _parse_float(fields.get("del", "0"), where, "del"),
                _parse_float(fields.get("drad", "0"), where, "drad"),
            )
            rec = TripletRecord(
                source_id=fields["source"],
                target_id=fields["target"],
                pose=pose,
                label=fields["label"],
                weight=weight,
                activation_path=fields.get("path", ""),
            )
            if rec.key in seen:
                raise FormatError(f"{where}: duplicate record key {rec.key}")
            seen.add(rec.key)
            records.append(rec)
    return Manifest(records=records, split=split, dataset=dataset)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest in the line format accepted by load_manifest."""
    lines = [f"@split {manifest.split}"]
    if manifest.dataset:
        lines.append(f"@dataset {manifest.dataset}")
    for rec in manifest.records:
        lines.append(
            f"source={rec.source_id} target={rec.target_id} label={rec.label} "
            f"weight={rec.weight:g} daz={rec.pose.d_azimuth_deg:g} "
            f"del={rec.pose.d_elevation_deg:g} drad={rec.pose.d_radius:g}"
            + (f" path={rec.activation_path}" if rec.activation_path else "")
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ValidationReport:
    """Report-only result of checking a manifest against files on disk."""

    issues: list[str] = field(default_factory=list)
    checked: int = 0
    weight_min: float | None = None
    weight_max: float | None = None
    weight_mean: float | None = None

    @property
    def ok(self) -> bool:
        return not self.issues

    def format_lines(self) -> list[str]:
        lines = [f"records checked: {self.checked}"]
        if self.weight_mean is not None:
            lines.append(
                f"weights: min={self.weight_min:g} max={self.weight_max:g} "
                f"mean={self.weight_mean:g}"
            )
        if self.issues:
            lines.append(f"issues ({len(self.issues)}):")
            lines.extend(f"  - {msg}" for msg in self.issues)
        else:
            lines.append("issues: none")
        return lines


def _expected_prsa_size(shapes: list[tuple[int, int, int]]) -> int:
    return 12 + 12 * len(shapes) + 4 * sum(h * w * c for h, w, c in shapes)


def validate_manifest(manifest: Manifest, root: str | Path) -> ValidationReport:
    """Check referenced files exist and agree in shape with the first record.

    Only headers and byte sizes are inspected; payloads are not parsed.
    Never raises: every problem becomes an issue line.
    """
    root = Path(root)
    report = ValidationReport()
    reference: tuple[str, object] | None = None
    weights = []
    for rec in manifest.records:
        report.checked += 1
        weights.append(rec.weight)
        if not rec.activation_path:
            continue
        path = root / rec.activation_path
        if not path.is_file():
            report.issues.append(f"missing file: {rec.activation_path}")
            continue
        try:
            with open(path, "rb") as fh:
                magic = fh.read(4)
            if magic == PRSA_MAGIC:
                shapes = read_activation_header(path)
                if path.stat().st_size != _expected_prsa_size(shapes):
                    report.issues.append(f"size mismatch vs header: {rec.activation_path}")
                    continue
                dims: object = ("prsa", tuple(shapes))
                total = sum(c for _, _, c in shapes)
            elif magic == PRSF_MAGIC:
                n, d = read_embedding_header(path)
                if path.stat().st_size != 16 + 4 * n * d:
                    report.issues.append(f"size mismatch vs header: {rec.activation_path}")
                    continue
                dims = ("prsf", d)
                total = d
            else:
                report.issues.append(f"unrecognized magic: {rec.activation_path}")
                continue
        except (FormatError, CorruptionError, OSError) as exc:
            report.issues.append(f"unreadable: {rec.activation_path} ({exc})")
            continue
        if reference is None:
            reference = (rec.activation_path, dims, total)
        elif dims != reference[1]:
            report.issues.append(
                f"dimension mismatch: {rec.activation_path} has {total} channels, "
                f"{reference[0]} has {reference[2]}"
            )
    if weights:
        report.weight_min = float(min(weights))
        report.weight_max = float(max(weights))
        report.weight_mean = float(sum(weights) / len(weights))
    return report
