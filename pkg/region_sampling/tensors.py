# -*- coding: utf-8 -*-
"""
DTEN container: little-endian header (magic "DTEN", u8 rank, rank × u32
dims, u8 dtype tag) followed by the row-major payload.  Tag 0 holds u16
class ids, tag 1 holds f32 values.
"""
import logging
import struct
from pathlib import Path
from typing import Dict, Final

import numpy as np

import constants

LOGGER = logging.getLogger(__name__)

DTYPES: Final[Dict[int, np.dtype]] = {
    constants.DTEN_DTYPE_U16: np.dtype('<u2'),
    constants.DTEN_DTYPE_F32: np.dtype('<f4')
}


class TensorFormatError(ValueError):
    pass


def dtypeTag(array: np.ndarray) -> int:
    if np.issubdtype(array.dtype, np.integer) or array.dtype == np.bool_:
        if array.size and (array.min() < 0 or array.max() > 0xFFFF):
            raise TensorFormatError(f'Integer values outside u16 range '
                                    f'[{array.min()}, {array.max()}].')
        return constants.DTEN_DTYPE_U16
    if np.issubdtype(array.dtype, np.floating):
        return constants.DTEN_DTYPE_F32
    raise TensorFormatError(f'No DTEN dtype for {array.dtype}.')


def encodeTensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim > 0xFF:
        raise TensorFormatError(f'Rank {array.ndim} does not fit in a u8.')
    tag = dtypeTag(array)
    header = struct.pack('<4sB', constants.DTEN_MAGIC, array.ndim) + \
        struct.pack(f'<{array.ndim}I', *array.shape) + struct.pack('<B', tag)
    payload = np.ascontiguousarray(array, dtype=DTYPES[tag]).tobytes()
    return header + payload


def decodeTensor(data: bytes) -> np.ndarray:
    """
    :raises TensorFormatError: on a bad magic, unknown dtype tag or a
        payload whose length does not match the header.
    """
    if len(data) < 5 or data[:4] != constants.DTEN_MAGIC:
        raise TensorFormatError('Missing DTEN magic bytes.')
    rank = data[4]
    offset = 5 + 4 * rank
    if len(data) < offset + 1:
        raise TensorFormatError(f'Truncated header for rank {rank}.')
    shape = struct.unpack_from(f'<{rank}I', data, 5)
    tag = data[offset]
    if tag not in DTYPES:
        raise TensorFormatError(f'Unknown dtype tag {tag}.')
    dtype = DTYPES[tag]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[offset + 1:]
    if len(payload) != expected:
        raise TensorFormatError(f'Payload holds {len(payload)} bytes, '
                                f'header promises {expected}.')
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def writeTensor(path: Path, array: np.ndarray) -> None:
    path.write_bytes(encodeTensor(array))
    LOGGER.debug(f'Wrote {array.shape} tensor to "{path}"')


def readTensor(path: Path) -> np.ndarray:
    try:
        return decodeTensor(path.read_bytes())
    except TensorFormatError as e:
        raise TensorFormatError(f'"{path}": {e}') from e
