"""
Self-describing tensor container for projector chains, solution stacks and MPS states.

Binary layout: magic b"FRUSTRA\\0", little-endian uint32 version, uint32 header length,
UTF-8 JSON header, then every tensor's row-major little-endian payload in header order.
The JSON form carries the same header with the data inlined.
"""
import json
import logging
import os
import pathlib
import struct
from typing import Literal, Union

import numpy as np
import scipy.sparse as sp

from .exact_solver import PropagationStep, SolutionStack
from .mps_engine import MpsState
from .projectors import BondProjector, ChainSpec

logger = logging.getLogger(__name__)

MAGIC = b"FRUSTRA\0"
VERSION = 1
OUTPUT_DIR_ENV = "FRUSTRA_OUTPUT_DIR"

_DTYPES = {"c16": np.dtype("<c16"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8")}

Format = Literal["binary", "json"]


def json_safe(value):
    """Non-finite floats become the strings "inf", "-inf" and "nan"; everything else passes through."""
    if isinstance(value, float) and not np.isfinite(value):
        return repr(float(value))
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


def get_output_dir() -> pathlib.Path:
    """
    Directory for run artifacts: $FRUSTRA_OUTPUT_DIR, or ./frustra-out. Created if missing.
    """
    out_dir = pathlib.Path(os.environ.get(OUTPUT_DIR_ENV, "frustra-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _dtype_code(array: np.ndarray) -> str:
    if np.iscomplexobj(array):
        return "c16"
    if np.issubdtype(array.dtype, np.integer):
        return "i8"
    return "f8"


def encode(kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    arrays = {name: np.ascontiguousarray(t, dtype=_DTYPES[_dtype_code(np.asarray(t))]) for name, t in tensors.items()}
    header = {
        "kind": kind,
        "meta": meta,
        "tensors": [{"name": name, "shape": list(a.shape), "dtype": _dtype_code(a)} for name, a in arrays.items()],
    }
    header_bytes = json.dumps(json_safe(header), allow_nan=False).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes] + [a.tobytes() for a in arrays.values()])


def decode(blob: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    """
    Raises:
        ValueError: On a bad magic, unknown version or truncated payload
    """
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError("not a frustra container (bad magic)")
    offset = len(MAGIC)
    version, header_len = struct.unpack_from("<II", blob, offset)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    offset += 8
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    tensors = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise ValueError(f"payload of tensor {entry['name']!r} is truncated")
        tensors[entry["name"]] = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(entry["shape"]).copy()
        offset += nbytes
    return header["kind"], header["meta"], tensors


def _inline(array: np.ndarray) -> list:
    if np.iscomplexobj(array):
        return [[float(z.real), float(z.imag)] for z in array.reshape(-1)]
    return array.reshape(-1).tolist()


def encode_json(kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> str:
    entries = []
    for name, t in tensors.items():
        t = np.asarray(t)
        entries.append({"name": name, "shape": list(t.shape), "dtype": _dtype_code(t), "data": _inline(t)})
    return json.dumps({"kind": kind, "version": VERSION, "meta": json_safe(meta), "tensors": entries}, allow_nan=False)


def decode_json(text: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    header = json.loads(text)
    if header.get("version") != VERSION:
        raise ValueError(f"unsupported container version {header.get('version')}")
    tensors = {}
    for entry in header["tensors"]:
        data = np.asarray(entry["data"], dtype=np.float64 if entry["dtype"] != "i8" else np.int64)
        if entry["dtype"] == "c16":
            data = data[:, 0] + 1j * data[:, 1] if data.size else data.astype(np.complex128)
        tensors[entry["name"]] = data.astype(_DTYPES[entry["dtype"]]).reshape(entry["shape"])
    return header["kind"], header["meta"], tensors


def write_container(path: Union[str, pathlib.Path], kind: str, meta: dict, tensors: dict[str, np.ndarray], fmt: Format = "binary") -> pathlib.Path:
    path = pathlib.Path(path)
    if fmt == "binary":
        path.write_bytes(encode(kind, meta, tensors))
    elif fmt == "json":
        path.write_text(encode_json(kind, meta, tensors), encoding="utf-8")
    else:
        raise ValueError(f"Unsupported format: {fmt}")
    logger.info("Wrote %s container to %s", kind, path)
    return path


def read_container(path: Union[str, pathlib.Path]) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read either form; the binary magic decides which."""
    blob = pathlib.Path(path).read_bytes()
    if blob.startswith(MAGIC):
        return decode(blob)
    return decode_json(blob.decode("utf-8"))


def _expect_kind(kind: str, expected: str) -> None:
    if kind != expected:
        raise ValueError(f"container holds {kind!r}, expected {expected!r}")


def save_chain(path, chain: ChainSpec, bonds: list[BondProjector], fmt: Format = "binary") -> pathlib.Path:
    tensors = {f"bond_{b.bond_index}": b.vectors for b in bonds}
    return write_container(path, "projector_chain", {"chain": chain.model_dump()}, tensors, fmt)


def load_chain(path) -> tuple[ChainSpec, list[BondProjector]]:
    kind, meta, tensors = read_container(path)
    _expect_kind(kind, "projector_chain")
    chain = ChainSpec(**meta["chain"])
    bonds = [BondProjector(bond_index=k, vectors=tensors[f"bond_{k}"]) for k in range(1, chain.n_sites)]
    return chain, bonds


def save_solution_stack(path, stack: SolutionStack, fmt: Format = "binary") -> pathlib.Path:
    """Γ tensors are stored in CSR parts; counts go in the header as decimal strings."""
    tensors = {}
    shapes = []
    for k, gamma in enumerate(stack.gammas, start=1):
        gamma = sp.csr_matrix(gamma)
        tensors[f"gamma_{k}_data"] = gamma.data.astype(np.complex128)
        tensors[f"gamma_{k}_indices"] = gamma.indices.astype(np.int64)
        tensors[f"gamma_{k}_indptr"] = gamma.indptr.astype(np.int64)
        shapes.append(list(gamma.shape))
    meta = {
        "local_dim": stack.local_dim,
        "s_sequence": [str(s) for s in stack.s_sequence],
        "shapes": shapes,
        "steps": [step.model_dump() for step in stack.steps],
    }
    return write_container(path, "solution_stack", meta, tensors, fmt)


def load_solution_stack(path) -> SolutionStack:
    kind, meta, tensors = read_container(path)
    _expect_kind(kind, "solution_stack")
    gammas = [
        sp.csr_matrix(
            (tensors[f"gamma_{k}_data"], tensors[f"gamma_{k}_indices"], tensors[f"gamma_{k}_indptr"]),
            shape=tuple(shape),
        )
        for k, shape in enumerate(meta["shapes"], start=1)
    ]
    return SolutionStack(
        local_dim=meta["local_dim"],
        gammas=gammas,
        s_sequence=[int(s) for s in meta["s_sequence"]],
        steps=[PropagationStep(**{**step, "sigma_gap": float(step["sigma_gap"])}) for step in meta["steps"]],
    )


def save_mps(path, state: MpsState, fmt: Format = "binary") -> pathlib.Path:
    tensors = {f"gamma_{k}": g for k, g in enumerate(state.gammas, start=1)}
    tensors.update({f"lambda_{k}": l for k, l in enumerate(state.lambdas, start=1)})
    meta = {"n_sites": state.n_sites, "chi_max": state.chi_max}
    return write_container(path, "mps_state", meta, tensors, fmt)


def load_mps(path) -> MpsState:
    kind, meta, tensors = read_container(path)
    _expect_kind(kind, "mps_state")
    n = meta["n_sites"]
    return MpsState(
        [tensors[f"gamma_{k}"] for k in range(1, n + 1)],
        [tensors[f"lambda_{k}"] for k in range(1, n)],
        meta["chi_max"],
    )
