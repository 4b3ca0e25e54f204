"""File formats: native volume container, uncompressed NIfTI-1, marker CSV,
dataset manifests, and npz checkpoints. All round-trips are bit-exact."""
from __future__ import annotations

import csv
import io as _io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .flim import EncoderLayer, FilterProvenance, LayerSpec, MarkerEntry, MarkerSet, NormParams
from .sunet import ArchSpec, DecoderParams, SUNet
from .volume import KernelBank, LabelVolume, Volume

MAGIC = b"FVOL0001"

NIFTI_HEADER_SIZE = 348
NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
NIFTI_CODE_F32 = 16
NIFTI_CODE_U8 = 2

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- native

def write_volume(vol: Volume, path) -> None:
    header = {
        "dims": list(vol.dims),
        "channels": vol.channels,
        "spacing": [float(s) for s in vol.spacing],
        "dtype": "f32le",
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())


def _read_native(blob: bytes, path) -> Volume:
    if len(blob) < len(MAGIC) + 4:
        raise FormatError(f"{path}: file shorter than the fixed header")
    off = len(MAGIC)
    (hlen,) = struct.unpack("<I", blob[off : off + 4])
    off += 4
    if len(blob) < off + hlen:
        raise FormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(blob[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc
    off += hlen
    for key in ("dims", "channels", "dtype"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    if header["dtype"] != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    dims = tuple(int(d) for d in header["dims"])
    channels = int(header["channels"])
    if channels < 0 or any(d < 1 for d in dims):
        raise FormatError(f"{path}: invalid geometry dims={dims} channels={channels}")
    expect = channels * int(np.prod(dims)) * 4
    payload = blob[off:]
    if len(payload) != expect:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expect}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape((channels,) + dims)
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    spacing = tuple(float(s) for s in header.get("spacing", [1.0] * len(dims)))
    return Volume(data.astype(np.float32), spacing=spacing)


# ---------------------------------------------------------------- nifti-1

def _nifti_header(dims, pixdims, datatype: int) -> bytes:
    h = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", h, 0, NIFTI_HEADER_SIZE)  # sizeof_hdr
    nd = len(dims)
    dim = [nd] + list(dims) + [1] * (7 - nd)
    struct.pack_into("<8h", h, 40, *dim)
    struct.pack_into("<h", h, 70, datatype)
    struct.pack_into("<h", h, 72, int(np.dtype(NIFTI_DTYPES[datatype]).itemsize * 8))
    pixdim = [1.0] + list(pixdims) + [1.0] * (7 - nd)
    struct.pack_into("<8f", h, 76, *pixdim)
    struct.pack_into("<f", h, 108, 352.0)  # vox_offset
    struct.pack_into("<f", h, 112, 1.0)    # scl_slope
    h[344:348] = b"n+1\x00"
    return bytes(h)


def write_nifti(path, array: np.ndarray, spacing=None) -> None:
    """Single-channel array (spatial axes only) as uncompressed .nii."""
    if array.dtype == np.uint8:
        code = NIFTI_CODE_U8
    else:
        array = np.asarray(array, dtype=np.float32)
        code = NIFTI_CODE_F32
    spacing = spacing or (1.0,) * array.ndim
    with open(path, "wb") as fh:
        fh.write(_nifti_header(array.shape, spacing, code))
        fh.write(b"\x00" * 4)  # extension flag
        fh.write(np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes(order="F"))


def _read_nifti(blob: bytes, path) -> Volume:
    if len(blob) < NIFTI_HEADER_SIZE:
        raise FormatError(f"{path}: shorter than a NIfTI-1 header")
    if blob[344:348] not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: NIfTI magic missing")
    # byte order heuristic: dim[0] must land in 1..7 under the right order
    order = "<"
    (dim0,) = struct.unpack_from("<h", blob, 40)
    if not 1 <= dim0 <= 7:
        (dim0_be,) = struct.unpack_from(">h", blob, 40)
        if 1 <= dim0_be <= 7:
            order = ">"
            dim0 = dim0_be
        else:
            raise FormatError(f"{path}: dim[0] = {dim0} invalid under either byte order")
    dim = struct.unpack_from(f"{order}8h", blob, 40)
    nd = dim[0]
    if nd not in (2, 3):
        raise FormatError(f"{path}: only 2D and 3D volumes supported, dim[0] = {nd}")
    dims = tuple(int(d) for d in dim[1 : nd + 1])
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive dimension in {dims}")
    (datatype,) = struct.unpack_from(f"{order}h", blob, 70)
    if datatype not in NIFTI_DTYPES:
        raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
    pixdim = struct.unpack_from(f"{order}8f", blob, 76)
    (vox_offset,) = struct.unpack_from(f"{order}f", blob, 108)
    offset = int(vox_offset) if vox_offset else NIFTI_HEADER_SIZE + 4
    dtype = np.dtype(NIFTI_DTYPES[datatype]).newbyteorder(order)
    expect = int(np.prod(dims)) * dtype.itemsize
    payload = blob[offset : offset + expect]
    if len(payload) != expect:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expect}")
    data = np.frombuffer(payload, dtype=dtype)
    # NIfTI payloads are Fortran ordered
    data = data.reshape(dims, order="F").astype(np.float32)
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1 : nd + 1])
    return Volume(data[None], spacing=spacing)


def read_volume(path) -> Volume:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] == MAGIC:
        return _read_native(blob, path)
    if len(blob) >= NIFTI_HEADER_SIZE and blob[344:348] in (b"n+1\x00", b"ni1\x00"):
        return _read_nifti(blob, path)
    raise FormatError(f"{path}: not a native volume or uncompressed NIfTI-1 file")


def read_labels(path) -> LabelVolume:
    vol = read_volume(path)
    if vol.channels != 1:
        raise FormatError(f"{path}: label volume must be single channel, got {vol.channels}")
    return LabelVolume.from_volume(vol)


# ---------------------------------------------------------------- markers

MARKER_HEADER = ["case_id", "x", "y", "z", "marker_id", "tag"]


def write_markers(marker_sets: list[MarkerSet], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MARKER_HEADER)
        for ms in marker_sets:
            for e in ms.entries:
                z = e.coord[2] if len(e.coord) == 3 else ""
                w.writerow([ms.image_id, e.coord[0], e.coord[1], z, e.marker_id, e.tag])


def parse_markers(text: str, source: str = "markers") -> dict[str, MarkerSet]:
    """CSV rows `case_id,x,y,z,marker_id,tag` with 0-based voxel coordinates
    along axes 0,1,2; z left blank for 2D images. Errors carry the row number
    (1-based, counting the header as row 1)."""
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise FormatError(f"{source}: empty file")
    if rows[0] != MARKER_HEADER:
        raise FormatError(f"{source}: row 1: header must be {','.join(MARKER_HEADER)}")
    by_case: dict[str, list[MarkerEntry]] = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MARKER_HEADER):
            raise FormatError(f"{source}: row {line_no}: expected 6 fields, got {len(row)}")
        case_id, xs, ys, zs, mid, tag = [f.strip() for f in row]
        if not case_id:
            raise FormatError(f"{source}: row {line_no}: empty case_id")
        try:
            coord = (int(xs), int(ys)) if zs == "" else (int(xs), int(ys), int(zs))
            marker_id = int(mid)
        except ValueError as exc:
            raise FormatError(f"{source}: row {line_no}: {exc}") from exc
        if any(c < 0 for c in coord):
            raise FormatError(f"{source}: row {line_no}: negative coordinate {coord}")
        try:
            entry = MarkerEntry(coord=coord, marker_id=marker_id, tag=tag)
        except ValueError as exc:
            raise FormatError(f"{source}: row {line_no}: {exc}") from exc
        by_case.setdefault(case_id, []).append(entry)
    out = {}
    for case_id, entries in by_case.items():
        try:
            out[case_id] = MarkerSet(image_id=case_id, entries=entries)
        except ValueError as exc:
            raise FormatError(f"{source}: case {case_id}: {exc}") from exc
    return out


def read_markers(path, dims=None) -> dict[str, MarkerSet]:
    sets = parse_markers(Path(path).read_text(), source=str(path))
    if dims is not None:
        for ms in sets.values():
            for i, e in enumerate(ms.entries):
                if len(e.coord) != len(dims) or any(
                    c < 0 or c >= d for c, d in zip(e.coord, dims)
                ):
                    raise FormatError(
                        f"{path}: case {ms.image_id}: entry {i} at {e.coord} outside dims {dims}"
                    )
    return sets


# ---------------------------------------------------------------- manifest

@dataclass
class CaseRecord:
    case_id: str
    flair: str
    t1gd: str
    gt: str | None
    split: str
    mode: str = "typical"


@dataclass
class DatasetManifest:
    cases: list[CaseRecord]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for c in self.cases:
            if c.case_id in seen:
                raise FormatError(f"duplicate case id {c.case_id!r}")
            seen.add(c.case_id)
            if c.split not in ("train", "val", "test"):
                raise FormatError(f"case {c.case_id}: bad split {c.split!r}")

    def split_cases(self, split: str) -> list[CaseRecord]:
        return [c for c in self.cases if c.split == split]

    def case(self, case_id: str) -> CaseRecord:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot load manifest ({exc})") from exc
    if not isinstance(doc, dict) or "cases" not in doc:
        raise FormatError(f"{path}: manifest must be an object with a cases list")
    cases = []
    for i, c in enumerate(doc["cases"]):
        try:
            cases.append(
                CaseRecord(
                    case_id=c["case_id"],
                    flair=c["flair"],
                    t1gd=c["t1gd"],
                    gt=c.get("gt"),
                    split=c["split"],
                    mode=c.get("mode", "typical"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: case entry {i} malformed ({exc})") from exc
    return DatasetManifest(cases=cases, root=path.parent)


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "cases": [
            {
                "case_id": c.case_id,
                "flair": c.flair,
                "t1gd": c.t1gd,
                "gt": c.gt,
                "split": c.split,
                "mode": c.mode,
            }
            for c in manifest.cases
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- checkpoint

def _layer_meta(layer: EncoderLayer) -> dict:
    return {
        "pool_window": list(layer.pool_window),
        "pool_stride": list(layer.pool_stride),
        "provenance": [
            {"image_id": p.image_id, "marker_id": p.marker_id, "cluster_index": p.cluster_index}
            for p in layer.provenance
        ],
        "notes": list(layer.notes),
    }


def _spec_meta(spec: LayerSpec) -> dict:
    return {
        "kernel_extent": spec.kernel_extent if isinstance(spec.kernel_extent, int) else list(spec.kernel_extent),
        "filters_per_marker": spec.filters_per_marker,
        "total_filters": spec.total_filters,
        "pool_window": spec.pool_window if isinstance(spec.pool_window, int) else list(spec.pool_window),
        "pool_stride": spec.pool_stride if isinstance(spec.pool_stride, int) else list(spec.pool_stride),
        "activation": spec.activation,
    }


def _spec_from_meta(m: dict) -> LayerSpec:
    tup = lambda v: tuple(v) if isinstance(v, list) else v
    return LayerSpec(
        kernel_extent=tup(m["kernel_extent"]),
        filters_per_marker=m["filters_per_marker"],
        total_filters=m["total_filters"],
        pool_window=tup(m["pool_window"]),
        pool_stride=tup(m["pool_stride"]),
        activation=m["activation"],
    )


def save_checkpoint(net: SUNet, annotations: dict[int, str], path) -> None:
    arrays = {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "decoder_widths": list(net.arch.decoder_widths),
        "n_classes": net.arch.n_classes,
        "annotations": {str(k): v for k, v in annotations.items()},
        "encoders": {},
        "arch_specs": {
            "flair": [_spec_meta(s) for s in net.arch.encoder_flair],
            "t1gd": [_spec_meta(s) for s in net.arch.encoder_t1gd],
        },
        "n_decoder_levels": len(net.decoder.levels),
    }
    for name, layers in (("flair", net.encoder_flair), ("t1gd", net.encoder_t1gd)):
        meta["encoders"][name] = [_layer_meta(layer) for layer in layers]
        for i, layer in enumerate(layers):
            arrays[f"{name}_{i}_weights"] = layer.bank.weights
            arrays[f"{name}_{i}_bias"] = layer.bank.bias
            arrays[f"{name}_{i}_mean"] = layer.norm.mean
            arrays[f"{name}_{i}_stdev"] = layer.norm.stdev
    for i, (w, b) in enumerate(net.decoder.levels):
        arrays[f"dec_{i}_w"] = w
        arrays[f"dec_{i}_b"] = b
    arrays["dec_final_w"] = net.decoder.final[0]
    arrays["dec_final_b"] = net.decoder.final[1]
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path) -> tuple[SUNet, dict[int, str]]:
    try:
        with np.load(path, allow_pickle=False) as npz:
            data = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc})") from exc
    if "meta" not in data:
        raise FormatError(f"{path}: checkpoint missing meta record")
    meta = json.loads(str(data["meta"]))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    encoders = {}
    for name in ("flair", "t1gd"):
        layers = []
        for i, lm in enumerate(meta["encoders"][name]):
            try:
                weights = data[f"{name}_{i}_weights"]
                bias = data[f"{name}_{i}_bias"]
                mean = data[f"{name}_{i}_mean"]
                stdev = data[f"{name}_{i}_stdev"]
            except KeyError as exc:
                raise FormatError(f"{path}: missing array {exc}") from exc
            layers.append(
                EncoderLayer(
                    norm=NormParams(mean=mean, stdev=stdev),
                    bank=KernelBank(weights, bias=bias),
                    pool_window=tuple(lm["pool_window"]),
                    pool_stride=tuple(lm["pool_stride"]),
                    provenance=[
                        FilterProvenance(p["image_id"], p["marker_id"], p["cluster_index"])
                        for p in lm["provenance"]
                    ],
                    notes=list(lm["notes"]),
                )
            )
        encoders[name] = layers
    levels = []
    for i in range(meta["n_decoder_levels"]):
        levels.append((data[f"dec_{i}_w"], data[f"dec_{i}_b"]))
    decoder = DecoderParams(levels=levels, final=(data["dec_final_w"], data["dec_final_b"]))
    arch = ArchSpec(
        encoder_flair=[_spec_from_meta(m) for m in meta["arch_specs"]["flair"]],
        encoder_t1gd=[_spec_from_meta(m) for m in meta["arch_specs"]["t1gd"]],
        decoder_widths=tuple(meta["decoder_widths"]),
        n_classes=meta["n_classes"],
    )
    net = SUNet(
        encoder_flair=encoders["flair"],
        encoder_t1gd=encoders["t1gd"],
        decoder=decoder,
        arch=arch,
    )
    annotations = {int(k): v for k, v in meta["annotations"].items()}
    return net, annotations
