"""
Embedding and checkpoint file formats

JSONL corpus: one {"speaker", "utt", "vec", optional "tag"} object per line.
Binary corpus: b'SRPLEMB1', u32 D, u32 count, then per record
    u16 len + speaker bytes, u16 len + utt bytes, D x f32 (all little-endian).
Adapter checkpoint: b'SRPLNET1', 4 x u32 dims, f64 parameters W1 b1 W2 b2 W3 b3 row-major.
Head checkpoint: b'SRPLHEAD', u32 K, u32 M, u32 D, f64 RPs, CPs, radii.
Baseline heads reuse the matrix block layout with their own magic.

Decoders yield raw (speaker, utt, vector, tag) tuples; validation belongs to
the corpus service so every error can name its record index.
"""
import json
import struct
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import CorpusFormatError, DataError
from app.db.models import AdapterNetwork, CosineHead, PrototypeHead, SoftmaxHead, SrplHead

CORPUS_MAGIC = b'SRPLEMB1'
ADAPTER_MAGIC = b'SRPLNET1'
HEAD_MAGIC = b'SRPLHEAD'
SOFTMAX_MAGIC = b'SRPLSMAX'
PROTOTYPE_MAGIC = b'SRPLPROT'
COSINE_MAGIC = b'SRPLCOSN'

RawRecord = Tuple[str, str, np.ndarray, Optional[str]]


# ---------------------------------------------------------------------------
# Corpus formats
# ---------------------------------------------------------------------------

def iter_jsonl(path: Path) -> Iterator[RawRecord]:
    with open(path, 'rb') as handle:
        for index, raw_line in enumerate(handle):
            try:
                line = raw_line.decode('utf-8')
            except UnicodeDecodeError as e:
                raise CorpusFormatError(index, "malformed record: not UTF-8", path) from e
            if not line.strip():
                raise CorpusFormatError(index, "malformed record: empty line", path)
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(index, f"malformed record: {e.msg}", path) from e
            if not isinstance(obj, dict):
                raise CorpusFormatError(index, "malformed record: not an object", path)
            try:
                speaker = obj['speaker']
                utt = obj['utt']
                vec = obj['vec']
            except KeyError as e:
                raise CorpusFormatError(index, f"malformed record: missing field {e.args[0]!r}", path) from e
            if not isinstance(speaker, str) or not isinstance(utt, str):
                raise CorpusFormatError(index, "malformed record: speaker and utt must be strings", path)
            if not isinstance(vec, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in vec
            ):
                raise CorpusFormatError(index, "malformed record: vec must be a list of numbers", path)
            tag = obj.get('tag')
            if tag is not None and not isinstance(tag, str):
                raise CorpusFormatError(index, "malformed record: tag must be a string", path)
            yield speaker, utt, np.asarray(vec, dtype=np.float64), tag


def write_jsonl(path: Path, records) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            obj = {
                'speaker': record.speaker_id,
                'utt': record.utterance_id,
                'vec': [float(v) for v in record.vector],
                'tag': record.tag
            }
            handle.write(json.dumps(obj, ensure_ascii=False) + '\n')


def _take(buffer: bytes, offset: int, size: int, index: int, path: Path) -> Tuple[bytes, int]:
    end = offset + size
    if end > len(buffer):
        raise CorpusFormatError(index, "malformed record: truncated binary data", path)
    return buffer[offset:end], end


def _unpack_header(buffer: bytes, path: Path) -> Tuple[int, int]:
    if len(buffer) < 16 or buffer[:8] != CORPUS_MAGIC:
        raise CorpusFormatError(None, "not an SRPLEMB1 file", path)
    return struct.unpack_from('<II', buffer, 8)


def read_binary_header(path: Path) -> Tuple[int, int]:
    """Return the (dimension, record count) declared by a binary corpus header."""
    with open(path, 'rb') as handle:
        return _unpack_header(handle.read(16), path)


def iter_binary(path: Path) -> Iterator[RawRecord]:
    buffer = Path(path).read_bytes()
    dim, count = _unpack_header(buffer, path)
    offset = 16
    for index in range(count):
        raw, offset = _take(buffer, offset, 2, index, path)
        (length,) = struct.unpack('<H', raw)
        speaker_bytes, offset = _take(buffer, offset, length, index, path)
        raw, offset = _take(buffer, offset, 2, index, path)
        (length,) = struct.unpack('<H', raw)
        utt_bytes, offset = _take(buffer, offset, length, index, path)
        vec_bytes, offset = _take(buffer, offset, 4 * dim, index, path)
        try:
            speaker = speaker_bytes.decode('utf-8')
            utt = utt_bytes.decode('utf-8')
        except UnicodeDecodeError as e:
            raise CorpusFormatError(index, "malformed record: labels are not UTF-8", path) from e
        vector = np.frombuffer(vec_bytes, dtype='<f4').astype(np.float64)
        yield speaker, utt, vector, None
    if offset != len(buffer):
        raise CorpusFormatError(count, "malformed record: trailing bytes after last record", path)


def write_binary(path: Path, records, dimension: int) -> None:
    chunks = [CORPUS_MAGIC, struct.pack('<II', dimension, len(records))]
    for record in records:
        for label in (record.speaker_id, record.utterance_id):
            encoded = label.encode('utf-8')
            if len(encoded) > 0xFFFF:
                raise DataError(f"label too long for binary format: {label[:32]}...")
            chunks.append(struct.pack('<H', len(encoded)))
            chunks.append(encoded)
        chunks.append(np.asarray(record.vector, dtype='<f4').tobytes())
    Path(path).write_bytes(b''.join(chunks))


# ---------------------------------------------------------------------------
# Checkpoint formats
# ---------------------------------------------------------------------------

def _f64_bytes(arrays: Sequence[np.ndarray]) -> bytes:
    return b''.join(np.ascontiguousarray(a, dtype='<f8').tobytes() for a in arrays)


class _Reader:
    """Sequential reader over a checkpoint buffer with truncation checks."""

    def __init__(self, path: Path, magic: bytes):
        self.path = path
        self.buffer = Path(path).read_bytes()
        if self.buffer[:8] != magic:
            raise DataError(f"{path} is not a {magic.decode()} checkpoint")
        self.offset = 8

    def u32(self, count: int) -> Tuple[int, ...]:
        size = 4 * count
        if self.offset + size > len(self.buffer):
            raise DataError(f"truncated checkpoint {self.path}")
        values = struct.unpack_from(f'<{count}I', self.buffer, self.offset)
        self.offset += size
        return values

    def f64(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        size = 8 * count
        if self.offset + size > len(self.buffer):
            raise DataError(f"truncated checkpoint {self.path}")
        values = np.frombuffer(self.buffer, dtype='<f8', count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float64).reshape(shape)

    def finish(self) -> None:
        if self.offset != len(self.buffer):
            raise DataError(f"trailing bytes in checkpoint {self.path}")


def write_adapter(path: Path, net: AdapterNetwork) -> None:
    header = ADAPTER_MAGIC + struct.pack('<4I', *net.layer_dims)
    Path(path).write_bytes(header + _f64_bytes(net.parameters()))


def read_adapter(path: Path) -> AdapterNetwork:
    reader = _Reader(path, ADAPTER_MAGIC)
    dims = reader.u32(4)
    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for i in range(3):
        weights.append(reader.f64((dims[i], dims[i + 1])))
        biases.append(reader.f64((dims[i + 1],)))
    reader.finish()
    return AdapterNetwork(dims, weights, biases)


def write_head(path: Path, head: SrplHead) -> None:
    header = HEAD_MAGIC + struct.pack('<3I', head.k_known, head.m_syn, head.dim)
    Path(path).write_bytes(header + _f64_bytes([head.rps, head.cps, head.radii]))


def read_head(path: Path) -> SrplHead:
    reader = _Reader(path, HEAD_MAGIC)
    k_known, m_syn, dim = reader.u32(3)
    rows = k_known + m_syn
    rps = reader.f64((rows, dim))
    cps = reader.f64((rows, dim))
    radii = reader.f64((k_known,))
    reader.finish()
    return SrplHead(rps, cps, radii, k_known, m_syn)


def write_baseline_head(path: Path, head) -> None:
    if isinstance(head, SoftmaxHead):
        rows, cols = head.weights.shape
        body = struct.pack('<2I', rows, cols) + _f64_bytes([head.weights, head.bias])
        magic = SOFTMAX_MAGIC
    elif isinstance(head, PrototypeHead):
        rows, cols = head.prototypes.shape
        body = struct.pack('<2I', rows, cols) + _f64_bytes([head.prototypes])
        magic = PROTOTYPE_MAGIC
    elif isinstance(head, CosineHead):
        rows, cols = head.centroids.shape
        body = struct.pack('<2I', rows, cols) + _f64_bytes([head.centroids, np.array([head.scale])])
        magic = COSINE_MAGIC
    else:
        raise DataError(f"cannot serialize head of type {type(head).__name__}")
    Path(path).write_bytes(magic + body)


def read_baseline_head(path: Path):
    magic = Path(path).read_bytes()[:8]
    reader = _Reader(path, magic)
    rows, cols = reader.u32(2)
    if magic == SOFTMAX_MAGIC:
        head = SoftmaxHead(reader.f64((rows, cols)), reader.f64((cols,)))
    elif magic == PROTOTYPE_MAGIC:
        head = PrototypeHead(reader.f64((rows, cols)))
    elif magic == COSINE_MAGIC:
        centroids = reader.f64((rows, cols))
        head = CosineHead(centroids, float(reader.f64((1,))[0]))
    else:
        raise DataError(f"{path} is not a baseline head checkpoint")
    reader.finish()
    return head
