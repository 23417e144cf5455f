"""Checkpoint files: one line of JSON header, then raw little-endian float32 blocks.

Blocks follow ``Model.parameters()`` order (layer by layer, set by set, weight
before bias); weights are row-major ``[out, in, h, w]``. Offsets in the header
are relative to the first payload byte.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import TypeAdapter, ValidationError

from .errors import CheckpointError
from .network import Model, count_parameters, init_model
from .schemas import NetworkSpec

logger = logging.getLogger(__name__)

FORMAT_NAME = 'mrsep-checkpoint'
FORMAT_VERSION = 1
_BLOCK_DTYPE = np.dtype('<f4')

_spec_adapter = TypeAdapter(NetworkSpec)


def _block_names(model: Model):
    for i, layer in enumerate(model.params):
        for j, _ in enumerate(layer):
            yield f'layer{i}.set{j}.weight'
            yield f'layer{i}.set{j}.bias'


def save_checkpoint(path: Path, model: Model, metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = []
    offset = 0
    for name, arr in zip(_block_names(model), model.parameters()):
        blocks.append({'name': name, 'shape': list(arr.shape), 'offset': offset, 'count': int(arr.size)})
        offset += arr.size * _BLOCK_DTYPE.itemsize
    header = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'spec': model.spec.model_dump(mode='json'),
        'seed': model.rng_seed,
        'precision': model.precision.value,
        'dtype': _BLOCK_DTYPE.str,
        'metadata': metadata or {},
        'total_scalars': sum(b['count'] for b in blocks),
        'blocks': blocks,
    }
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'wb') as f:
        f.write(json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8'))
        f.write(b'\n')
        for arr in model.parameters():
            f.write(np.ascontiguousarray(arr, dtype=_BLOCK_DTYPE).tobytes())
    tmp.replace(path)
    logger.debug('Wrote checkpoint %s (%d scalars)', path, header['total_scalars'])
    return path


def read_header(path: Path) -> Tuple[Dict[str, Any], int]:
    """Return the parsed header and the byte offset where the payload starts."""
    with open(path, 'rb') as f:
        line = f.readline()
    try:
        header = json.loads(line.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'{path}: unreadable checkpoint header: {e}') from e
    if header.get('format') != FORMAT_NAME:
        raise CheckpointError(f'{path}: not a {FORMAT_NAME} file')
    if header.get('version') != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header, len(line)


def load_checkpoint(path: Path) -> Tuple[Model, Dict[str, Any]]:
    path = Path(path)
    header, start = read_header(path)
    try:
        spec = _spec_adapter.validate_python(header['spec'])
    except ValidationError as e:
        raise CheckpointError(f'{path}: invalid model spec in header:\n{e}') from e

    expected = count_parameters(spec)
    if header.get('total_scalars') != expected:
        raise CheckpointError(
            f"{path}: header declares {header.get('total_scalars')} scalars, spec needs {expected}"
        )
    payload = np.fromfile(path, dtype=_BLOCK_DTYPE, offset=start)
    if payload.size != expected:
        raise CheckpointError(f'{path}: payload holds {payload.size} scalars, expected {expected}')

    model = init_model(spec, seed=int(header.get('seed', 0)), precision=header.get('precision', 'f32'))
    if len(header['blocks']) != len(model.parameters()):
        raise CheckpointError(f"{path}: header lists {len(header['blocks'])} blocks, model has {len(model.parameters())}")
    arrays = []
    for block, ref in zip(header['blocks'], model.parameters()):
        if tuple(block['shape']) != ref.shape:
            raise CheckpointError(f"{path}: block {block['name']} has shape {block['shape']}, expected {list(ref.shape)}")
        first = block['offset'] // _BLOCK_DTYPE.itemsize
        arrays.append(payload[first:first + block['count']].reshape(ref.shape))
    model.set_parameters(arrays)
    return model, header.get('metadata', {})
