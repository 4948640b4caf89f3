"""Dataset directory format: ``manifest.json`` plus ``data.csv``.

The manifest carries exactly the keys kind, n, D, T, seed, config, version.
Floats are written with ``repr``, whose shortest round-trip form makes
write/read cycles bit-exact on every numeric field.

CSV layouts (one header row each):

* toy:   ``id,x0..x11,u,y``
* spike: ``id,ch,t,x,y,n_mask,m_mask,is_spike`` in long form, sorted by (id, ch, t)
* pairs: ``id,seg,x0..x11,u,y`` with one row per segment
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError
from .synthgen import (
    TOY_DIM,
    TOY_MASK,
    Dataset,
    PairConfig,
    PairInstance,
    SpikeConfig,
    SpikeInstance,
    ToyConfig,
    ToyInstance,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DATA_NAME = "data.csv"

_CONFIG_TYPES = {"toy": ToyConfig, "spike": SpikeConfig, "pairs": PairConfig}
_TUPLE_FIELDS = {"alpha", "theta"}


def manifest_dict(ds: Dataset) -> dict:
    return {
        "kind": ds.kind,
        "n": ds.n,
        "D": ds.D,
        "T": ds.T,
        "seed": ds.config.seed,
        "config": dataclasses.asdict(ds.config),
        "version": FORMAT_VERSION,
    }


def _f(v) -> str:
    return repr(float(v))


def write_dataset(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest_dict(ds), indent=2) + "\n", encoding="utf-8"
    )
    with open(directory / DATA_NAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if ds.kind == "toy":
            writer.writerow(["id"] + [f"x{j}" for j in range(TOY_DIM)] + ["u", "y"])
            for i, inst in enumerate(ds.instances):
                writer.writerow([i] + [_f(v) for v in inst.x] + [_f(inst.u), inst.y])
        elif ds.kind == "spike":
            writer.writerow(["id", "ch", "t", "x", "y", "n_mask", "m_mask", "is_spike"])
            for i, inst in enumerate(ds.instances):
                spike_sets = [set(g.tolist()) for g in inst.spike_times]
                for d in range(ds.D):
                    for t in range(ds.T):
                        writer.writerow([
                            i, d, t, _f(inst.x[d, t]), int(inst.y[t]),
                            int(inst.n_mask[d]), int(inst.m_mask[d]),
                            int(t in spike_sets[d]),
                        ])
        elif ds.kind == "pairs":
            writer.writerow(["id", "seg"] + [f"x{j}" for j in range(TOY_DIM)] + ["u", "y"])
            for i, inst in enumerate(ds.instances):
                for seg, (x, y) in enumerate([(inst.x1, inst.y1), (inst.x2, inst.y2)]):
                    writer.writerow([i, seg] + [_f(v) for v in x] + [_f(inst.u), y])
        else:
            raise DatasetFormatError(f"unknown dataset kind {ds.kind!r}")
    return directory


def _load_manifest(directory: Path) -> dict:
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"missing manifest: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format version {version!r} (supported: {FORMAT_VERSION})"
        )
    kind = manifest.get("kind")
    if kind not in _CONFIG_TYPES:
        raise DatasetFormatError(f"unknown dataset kind {kind!r} in manifest")
    return manifest


def _config_from_manifest(manifest: dict):
    cfg_cls = _CONFIG_TYPES[manifest["kind"]]
    raw = dict(manifest["config"])
    known = {f.name for f in dataclasses.fields(cfg_cls)}
    unknown = set(raw) - known
    if unknown:
        raise DatasetFormatError(f"manifest config has unknown fields: {sorted(unknown)}")
    for key in _TUPLE_FIELDS & set(raw):
        raw[key] = tuple(raw[key])
    return cfg_cls(**raw)


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = _load_manifest(directory)
    data_path = directory / DATA_NAME
    if not data_path.exists():
        raise FileNotFoundError(f"missing data file: {data_path}")
    cfg = _config_from_manifest(manifest)
    kind = manifest["kind"]
    with open(data_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    readers = {"toy": _read_toy, "spike": _read_spike, "pairs": _read_pairs}
    instances = readers[kind](rows, manifest)
    if len(instances) != manifest["n"]:
        raise DatasetFormatError(
            f"manifest says n={manifest['n']} but data has {len(instances)} instances"
        )
    return Dataset(kind=kind, config=cfg, instances=instances)


def _read_toy(rows, manifest) -> list:
    instances = []
    for row in rows:
        x = np.array([float(row[f"x{j}"]) for j in range(TOY_DIM)])
        u = float(row["u"])
        instances.append(
            ToyInstance(x=x, u=u, m=TOY_MASK.copy(), z=u * (TOY_MASK * x), y=int(row["y"]))
        )
    return instances


def _read_spike(rows, manifest) -> list:
    D, T = manifest["D"], manifest["T"]
    expected = manifest["n"] * D * T
    if len(rows) != expected:
        raise DatasetFormatError(f"spike data has {len(rows)} rows, expected {expected}")
    instances = []
    for start in range(0, len(rows), D * T):
        block = rows[start: start + D * T]
        x = np.empty((D, T))
        y = np.zeros(T, dtype=np.int64)
        n_mask = np.zeros(D, dtype=np.int64)
        m_mask = np.zeros(D, dtype=np.int64)
        spike_times = [[] for _ in range(D)]
        for row in block:
            d, t = int(row["ch"]), int(row["t"])
            x[d, t] = float(row["x"])
            y[t] = int(row["y"])
            n_mask[d] = int(row["n_mask"])
            m_mask[d] = int(row["m_mask"])
            if int(row["is_spike"]):
                spike_times[d].append(t)
        instances.append(
            SpikeInstance(
                x=x, y=y, n_mask=n_mask, m_mask=m_mask,
                spike_times=tuple(np.array(sorted(g), dtype=np.int64) for g in spike_times),
            )
        )
    return instances


def dataset_tensors(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Stacked model inputs and labels.

    Returns X with shape (n, D, T) and Y with shape (n,) for classification
    kinds (toy, pairs) or (n, T) float for spike sequences.
    """
    if ds.kind == "spike":
        x = np.stack([inst.x for inst in ds.instances]).astype(np.float64)
        y = np.stack([inst.y for inst in ds.instances]).astype(np.float64)
        return x, y
    x = np.stack([inst.x for inst in ds.instances]).astype(np.float64)[:, :, None]
    y = np.array([inst.y for inst in ds.instances], dtype=np.int64)
    return x, y


def _read_pairs(rows, manifest) -> list:
    if len(rows) % 2:
        raise DatasetFormatError("pairs data must have two rows per instance")
    instances = []
    for start in range(0, len(rows), 2):
        r1, r2 = rows[start], rows[start + 1]
        if (r1["seg"], r2["seg"]) != ("0", "1") or r1["id"] != r2["id"]:
            raise DatasetFormatError(f"pairs rows out of order near id={r1['id']}")
        instances.append(
            PairInstance(
                x1=np.array([float(r1[f"x{j}"]) for j in range(TOY_DIM)]),
                x2=np.array([float(r2[f"x{j}"]) for j in range(TOY_DIM)]),
                u=float(r1["u"]),
                y1=int(r1["y"]),
                y2=int(r2["y"]),
            )
        )
    return instances
