import struct
import logging
import constants
import numpy as np
import pandas as pd
from dataclasses import dataclass
from typing import Iterator, List, Optional
from datagen import LabeledScene, SceneDataset

logger = logging.getLogger(__name__)

# magic | version u16 | image count u32 | class count u16
_HEADER = struct.Struct('<4sHIH')
# domain u8 | H u16 | W u16
_RECORD_SHAPE = struct.Struct('<BHH')
_STORED_DOMAINS = (constants.DOMAIN_SYNTHETIC, constants.DOMAIN_REAL_COARSE, constants.DOMAIN_REAL_FINE)
_DENSE_DOMAINS = (constants.DOMAIN_SYNTHETIC, constants.DOMAIN_REAL_FINE)

class ContainerFormatError(ValueError):
    """ Raised when a dataset container cannot be parsed.

        Attributes:
            offset (int): Byte offset of the problem.
            record_id (str): Id of the record being read, if known. """

    def __init__(self, message:str, offset:int, record_id:Optional[str]=None) -> None:
        self.offset = offset
        self.record_id = record_id
        where = f'offset {offset}' if record_id is None else f'record {record_id} at offset {offset}'
        super().__init__(f'{message} ({where})')

@dataclass
class Violation():
    """ One invariant violation found by verify_container. """
    record_id: Optional[str]
    offset: int
    message: str

    def __str__(self) -> str:
        record = self.record_id if self.record_id is not None else '<header>'
        return f'{record} @ {self.offset}: {self.message}'

@dataclass
class _RawRecord():
    """ One record as stored, with the offsets of its payloads. """
    id: str
    offset: int
    domain: int
    image: np.ndarray
    label: np.ndarray
    provenance: np.ndarray
    label_offset: int
    provenance_offset: int

def serialize(dataset:SceneDataset) -> bytes:
    """ Encode a dataset: header, then one record per scene with its image as planar little-endian float32,
        its labels and its provenance flags as u8. """
    chunks = [_HEADER.pack(constants.CONTAINER_MAGIC, constants.CONTAINER_VERSION, len(dataset), dataset.num_classes)]
    for scene in dataset:
        if scene.domain not in _STORED_DOMAINS:
            raise ValueError(f'Scene {scene.id}: only synthetic, real-coarse and real-fine scenes can be stored. Received domain: {scene.domain}')
        if scene.height > 0xFFFF or scene.width > 0xFFFF:
            raise ValueError(f'Scene {scene.id}: sides have to fit in u16. Received: {scene.height}x{scene.width}')
        encoded = scene.id.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)) + encoded)
        chunks.append(_RECORD_SHAPE.pack(scene.domain, scene.height, scene.width))
        chunks.append(np.ascontiguousarray(scene.image, dtype='<f4').tobytes())
        chunks.append(np.ascontiguousarray(scene.label, dtype=np.uint8).tobytes())
        chunks.append(np.ascontiguousarray(scene.provenance, dtype=np.uint8).tobytes())
    return b''.join(chunks)

def _read_header(payload:bytes) -> tuple:
    if len(payload) < 4 or payload[:4] != constants.CONTAINER_MAGIC:
        raise ContainerFormatError(f'Bad magic, expected {constants.CONTAINER_MAGIC!r}', offset=0)
    if len(payload) < _HEADER.size:
        raise ContainerFormatError('Truncated header', offset=len(payload))
    _, version, count, num_classes = _HEADER.unpack_from(payload, 0)
    if version != constants.CONTAINER_VERSION:
        raise ContainerFormatError(f'Unsupported version {version}', offset=4)
    return count, num_classes

def _walk(payload:bytes, count:int) -> Iterator[_RawRecord]:
    """ Yield the raw records in file order; structural problems raise ContainerFormatError. """
    offset = _HEADER.size
    for position in range(count):
        start = offset
        if offset + 2 > len(payload):
            raise ContainerFormatError(f'Missing record {position} of {count}', offset=offset)
        (id_length,) = struct.unpack_from('<H', payload, offset)
        offset += 2
        if offset + id_length + _RECORD_SHAPE.size > len(payload):
            raise ContainerFormatError(f'Truncated id of record {position}', offset=offset)
        try:
            record_id = payload[offset:offset + id_length].decode('utf-8')
        except UnicodeDecodeError as error:
            raise ContainerFormatError(f'Record {position} id is not UTF-8', offset=offset) from error
        offset += id_length

        domain, height, width = _RECORD_SHAPE.unpack_from(payload, offset)
        offset += _RECORD_SHAPE.size
        pixels = height * width
        if offset + pixels * 14 > len(payload):
            raise ContainerFormatError('Truncated payload', offset=offset, record_id=record_id)

        image = np.frombuffer(payload, dtype='<f4', count=3 * pixels, offset=offset).reshape(3, height, width).astype(np.float64)
        label_offset = offset + 12 * pixels
        provenance_offset = label_offset + pixels
        label = np.frombuffer(payload, dtype=np.uint8, count=pixels, offset=label_offset).reshape(height, width).copy()
        provenance = np.frombuffer(payload, dtype=np.uint8, count=pixels, offset=provenance_offset).reshape(height, width).copy()
        offset = provenance_offset + pixels

        yield _RawRecord(record_id, start, domain, image, label, provenance, label_offset, provenance_offset)

    if offset != len(payload):
        raise ContainerFormatError(f'{len(payload) - offset} trailing bytes after {count} records', offset=offset)

def _check_record(record:_RawRecord, num_classes:int) -> List[Violation]:
    """ Value-level invariants of one record. """
    violations = []

    def flag(mask:np.ndarray, base:int, message:str) -> None:
        if mask.any():
            first = int(np.flatnonzero(mask.ravel())[0])
            violations.append(Violation(record.id, base + first, f'{message} ({int(mask.sum())} pixels)'))

    if record.domain not in _STORED_DOMAINS:
        violations.append(Violation(record.id, record.offset, f'Unknown domain tag {record.domain}'))
    if not np.all(np.isfinite(record.image)) or record.image.min(initial=0.0) < 0 or record.image.max(initial=0.0) > 1:
        violations.append(Violation(record.id, record.offset, 'Image values have to be finite and in [0,1]'))

    ignore = record.label == constants.IGNORE
    flag((record.label >= num_classes) & ~ignore, record.label_offset, f'Label values have to be below {num_classes} or IGNORE')
    flag(record.provenance > constants.PROVENANCE_IGNORE, record.provenance_offset, 'Unknown provenance flag')
    flag(ignore & (record.provenance == constants.PROVENANCE_MANUAL), record.provenance_offset, 'Manual provenance on IGNORE pixels')
    flag(ignore & (record.provenance == constants.PROVENANCE_PSEUDO), record.provenance_offset, 'Pseudo provenance on IGNORE pixels')
    flag(~ignore & (record.provenance == constants.PROVENANCE_IGNORE), record.provenance_offset, 'Ignore provenance on labeled pixels')
    if record.domain in _DENSE_DOMAINS:
        flag(ignore, record.label_offset, 'Dense domain with IGNORE pixels')
        flag(record.provenance == constants.PROVENANCE_PSEUDO, record.provenance_offset, 'Pseudo provenance outside the coarse domain')
    return violations

def _to_scene(record:_RawRecord) -> LabeledScene:
    # Cost is not stored: coarse scenes carry the coarse unit cost, the others none
    cost = constants.COARSE_MINUTES if record.domain == constants.DOMAIN_REAL_COARSE else 0.0
    return LabeledScene(id=record.id, image=record.image, label=record.label, domain=record.domain, provenance=record.provenance, cost_minutes=cost)

def parse(payload:bytes) -> SceneDataset:
    """ Decode a container. Any structural or value violation raises ContainerFormatError. """
    count, num_classes = _read_header(payload)
    scenes = []
    for record in _walk(payload, count):
        violations = _check_record(record, num_classes)
        if violations:
            raise ContainerFormatError(violations[0].message, offset=violations[0].offset, record_id=record.id)
        scenes.append(_to_scene(record))
    try:
        return SceneDataset(scenes, num_classes)
    except ValueError as error:
        raise ContainerFormatError(str(error), offset=_HEADER.size) from error

def verify_container(payload:bytes) -> List[Violation]:
    """ Collect every violation of the container invariants instead of stopping at the first one. """
    try:
        count, num_classes = _read_header(payload)
    except ContainerFormatError as error:
        return [Violation(None, error.offset, str(error))]

    violations = []
    seen = set()
    try:
        for record in _walk(payload, count):
            if record.id in seen:
                violations.append(Violation(record.id, record.offset, 'Duplicate record id'))
            seen.add(record.id)
            violations.extend(_check_record(record, num_classes))
    except ContainerFormatError as error:
        violations.append(Violation(error.record_id, error.offset, str(error)))
    return violations

def violations_to_frame(violations:List[Violation]) -> pd.DataFrame:
    return pd.DataFrame.from_records([vars(violation) for violation in violations], columns=['record_id', 'offset', 'message'])

def save(dataset:SceneDataset, path:str) -> None:
    with open(path, 'wb') as file:
        file.write(serialize(dataset))
    logger.debug(f'Wrote {len(dataset)} records to {path}.')

def load(path:str) -> SceneDataset:
    with open(path, 'rb') as file:
        return parse(file.read())
