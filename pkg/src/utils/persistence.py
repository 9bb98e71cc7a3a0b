"""
File formats

Handles:
- 8-bit binary PGM (P5) images and {0, 255} masks
- Contour CSV files, one "x,y" pair per line
- The UUNW weights file
- JSON documents for configs and results

Weights file layout (little-endian):
    magic "UUNW", version u8, tensor count u32
    per tensor: name length u16, UTF-8 name, rank u8, dims u32 each,
    raw float32 data
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from ..config.constants import PGM_MAXVAL, WEIGHTS_MAGIC, WEIGHTS_VERSION
from ..models.imaging import BinaryMask, Contour, GrayImage
from ..models.model_graph import GraphValidationError, ModelGraph

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported PGM files"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ContourFormatError(ValueError):
    """Raised for malformed contour CSV files"""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class WeightsFormatError(ValueError):
    """Raised for corrupt weights files or tensors that do not fit the target graph"""
    pass


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_PGM_WHITESPACE = b" \t\r\n"


def _pgm_tokens(data: bytes, count: int) -> Tuple[List[Tuple[bytes, int]], int]:
    """Read count header tokens, skipping whitespace and comments. Returns tokens and the data offset."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and (data[pos] in _PGM_WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        if pos >= len(data):
            raise ImageFormatError("header ends early", pos)
        start = pos
        while pos < len(data) and data[pos] not in _PGM_WHITESPACE:
            pos += 1
        tokens.append((data[start:pos], start))
    if pos >= len(data):
        raise ImageFormatError("missing whitespace after header", pos)
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def _parse_pgm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        found = data[:2].decode("latin-1", errors="replace")
        raise ImageFormatError(f"expected binary grayscale PGM magic 'P5', found {found!r}", 0)
    tokens, offset = _pgm_tokens(data, 4)
    values = []
    for label, (tok, at) in zip(("width", "height", "maxval"), tokens[1:]):
        if not tok.isdigit() or int(tok) <= 0:
            raise ImageFormatError(f"invalid {label} {tok!r}", at)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != PGM_MAXVAL:
        raise ImageFormatError(f"only 8-bit PGM (maxval {PGM_MAXVAL}) is supported, got {maxval}", tokens[3][1])
    expected = width * height
    available = len(data) - offset
    if available < expected:
        raise ImageFormatError(
            f"truncated raster: expected {expected} bytes, found {available}", offset + max(available, 0)
        )
    return np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset).reshape(height, width)


def read_pgm(path: PathLike) -> GrayImage:
    """
    Read a P5 image as float32 in [0, 1].

    Raises:
        ImageFormatError: On bad magic, header or truncated payload
    """
    raw = _parse_pgm(Path(path).read_bytes())
    return (raw.astype(np.float32) / PGM_MAXVAL).astype(np.float32)


def write_pgm(path: PathLike, img: GrayImage) -> None:
    """Write a [0, 1] image as 8-bit P5, rounding half up."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-D image, got shape {img.shape}")
    q = np.floor(np.clip(img, 0.0, 1.0) * PGM_MAXVAL + 0.5).astype(np.uint8)
    _write_raster(path, q)


def _write_raster(path: PathLike, raster: np.ndarray) -> None:
    h, w = raster.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(raster, dtype=np.uint8).tobytes())


def read_mask(path: PathLike) -> BinaryMask:
    """Read a P5 mask; any non-zero pixel is foreground."""
    return _parse_pgm(Path(path).read_bytes()) > 0


def write_mask(path: PathLike, mask: BinaryMask) -> None:
    _write_raster(path, np.where(np.asarray(mask, dtype=bool), PGM_MAXVAL, 0).astype(np.uint8))


# ---------------------------------------------------------------------------
# Contours
# ---------------------------------------------------------------------------


def write_contour(path: PathLike, contour: Contour) -> None:
    """One "x,y" line per point; repr floats keep the values exact."""
    pts = np.asarray(contour, dtype=np.float64).reshape(-1, 2)
    lines = [f"{float(x)!r},{float(y)!r}" for x, y in pts]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_contour(path: PathLike) -> Contour:
    """
    Read a contour CSV in file order.

    Raises:
        ContourFormatError: On an empty file or a non-numeric cell
    """
    text = Path(path).read_text(encoding="utf-8")
    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 2:
            raise ContourFormatError(f"expected 2 cells, found {len(cells)}", lineno)
        try:
            points.append((float(cells[0]), float(cells[1])))
        except ValueError:
            raise ContourFormatError(f"non-numeric cell in {line.strip()!r}", lineno)
    if not points:
        raise ContourFormatError("contour file is empty", 1)
    return np.asarray(points, dtype=np.float64)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sBI")


def save_weights(graph: ModelGraph, path: PathLike) -> None:
    """Write every parameter of graph in layer order as float32."""
    chunks = [_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(graph.params))]
    for name, param in graph.params.items():
        encoded = name.encode("utf-8")
        value = np.ascontiguousarray(param.value, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    Path(path).write_bytes(b"".join(chunks))
    logger.info(f"Saved {len(graph.params)} tensors of {graph.name} to {path}")


def read_weights_file(path: PathLike) -> Dict[str, np.ndarray]:
    """
    Parse a weights file into name -> float32 array.

    Raises:
        WeightsFormatError: On unknown magic/version or truncated content
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise WeightsFormatError(f"{path}: file shorter than the header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path}: unknown magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")

    pos = _HEADER.size
    tensors: Dict[str, np.ndarray] = {}
    name = "<header>"
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if pos + 4 * n > len(data):
                raise WeightsFormatError(f"{path}: tensor '{name}' is truncated")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
    except (struct.error, UnicodeDecodeError) as e:
        raise WeightsFormatError(f"{path}: corrupt entry after tensor '{name}': {e}")
    if pos != len(data):
        raise WeightsFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return tensors


def load_weights(graph: ModelGraph, path: PathLike) -> None:
    """
    Load a weights file into graph in place.

    Raises:
        WeightsFormatError: On a corrupt file or any name/shape disagreement, naming the tensor
    """
    tensors = read_weights_file(path)
    for name, value in tensors.items():
        if name not in graph.params:
            raise WeightsFormatError(f"tensor '{name}' does not exist in {graph.name}")
        expected = graph.params[name].value.shape
        if value.shape != expected:
            raise WeightsFormatError(
                f"tensor '{name}' has shape {value.shape}, {graph.name} expects {expected}"
            )
    missing = [n for n in graph.params if n not in tensors]
    if missing:
        raise WeightsFormatError(f"tensor '{missing[0]}' missing from {path} ({len(missing)} missing)")
    try:
        graph.load_state_dict({n: v.astype(graph.params[n].value.dtype) for n, v in tensors.items()})
    except GraphValidationError as e:
        raise WeightsFormatError(str(e))
    logger.info(f"Loaded {len(tensors)} tensors into {graph.name} from {path}")


def count_weights_file_params(path: PathLike) -> int:
    """Element count of every tensor stored in a weights file."""
    return sum(int(v.size) for v in read_weights_file(path).values())


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def write_json(path: PathLike, payload: Any) -> None:
    """Pretty, key-sorted JSON so repeated runs diff cleanly."""
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
