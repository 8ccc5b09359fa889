"""Model file persistence.

Models are stored as NPZ containers (a zip archive of .npy arrays, one per
key) with a magic string and a format version entry. Loading rebuilds the
trained model from the stored caches without recomputation, so predictions
after a save/load round trip are bit-identical to in-memory predictions.
"""

from __future__ import annotations

import numpy as np

from .encoding import EncodingConfig
from .gp import EnsembleModel, TrainedModel
from .kernel import params_from_phi

MAGIC = "bintreegp-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """The file is not a recognized model container."""


def _encoding_entries(prefix, enc):
    entries = {
        f"{prefix}n_dims": np.int64(enc.n_dims),
        f"{prefix}precision": np.int64(enc.precision),
        f"{prefix}bit_order": np.asarray(enc.bit_order, dtype=np.int64),
        f"{prefix}lo": enc.lo,
        f"{prefix}hi": enc.hi,
        f"{prefix}degenerate": enc.degenerate,
        f"{prefix}has_ecdf": np.bool_(enc.ecdf_knots is not None),
    }
    if enc.ecdf_knots is not None:
        entries[f"{prefix}ecdf_knots"] = enc.ecdf_knots
    return entries


def _encoding_from(data, prefix=""):
    return EncodingConfig(
        n_dims=int(data[f"{prefix}n_dims"]),
        precision=int(data[f"{prefix}precision"]),
        bit_order=data[f"{prefix}bit_order"],
        lo=data[f"{prefix}lo"],
        hi=data[f"{prefix}hi"],
        degenerate=data[f"{prefix}degenerate"],
        ecdf_knots=(
            data[f"{prefix}ecdf_knots"]
            if bool(data[f"{prefix}has_ecdf"])
            else None
        ),
    )


def _member_entries(prefix, mdl):
    return {
        f"{prefix}phi": mdl.params.phi,
        f"{prefix}noise": np.float64(mdl.params.noise),
        f"{prefix}z": mdl.z,
        f"{prefix}Cinv": mdl.Cinv,
        f"{prefix}Uinv": mdl.Uinv,
        f"{prefix}logdet": np.float64(mdl.logdet),
        f"{prefix}train_nll": np.float64(mdl.train_nll),
    }


def _member_from(data, prefix, train_bits, P, y_mean, y_std, encoding):
    params = params_from_phi(
        data[f"{prefix}phi"], float(data[f"{prefix}noise"])
    )
    return TrainedModel(
        params=params,
        train_bits=train_bits,
        P=P,
        z=data[f"{prefix}z"],
        Cinv=data[f"{prefix}Cinv"],
        Uinv=data[f"{prefix}Uinv"],
        logdet=float(data[f"{prefix}logdet"]),
        train_nll=float(data[f"{prefix}train_nll"]),
        y_mean=y_mean,
        y_std=y_std,
        encoding=encoding,
    )


def save_model(path, model, X_train=None, y_train=None):
    """Write a single model or an ensemble to an NPZ container.

    ``X_train``/``y_train`` (raw units) are optional; they enable the
    joint-rescale out-of-box strategy, which refits the bounding box over
    train and test extents and rebuilds the model caches.
    """
    if isinstance(model, EnsembleModel):
        first = model.members[0]
        entries = {
            "kind": np.str_("ensemble"),
            "n_members": np.int64(len(model.members)),
            "mixture_weights": model.weights,
            "temperature": np.float64(model.temperature),
        }
        for k, mdl in enumerate(model.members):
            entries.update(_member_entries(f"member{k}_", mdl))
    else:
        first = model
        entries = {"kind": np.str_("single")}
        entries.update(_member_entries("member0_", model))
        entries["n_members"] = np.int64(1)

    entries.update(
        magic=np.str_(MAGIC),
        format_version=np.int64(FORMAT_VERSION),
        train_bits=first.train_bits.astype(np.uint8),
        y_mean=np.float64(first.y_mean),
        y_std=np.float64(first.y_std),
    )
    entries.update(_encoding_entries("enc_", first.encoding))
    if X_train is not None:
        entries["X_train"] = np.asarray(X_train, dtype=np.float64)
    if y_train is not None:
        entries["y_train"] = np.asarray(y_train, dtype=np.float64)
    np.savez(path, **entries)


def load_model(path):
    """Load a model container; returns (model, extras) where model is a
    TrainedModel or EnsembleModel and extras holds optional raw training
    data ({'X_train': ..., 'y_train': ...} when stored)."""
    with np.load(path, allow_pickle=False) as data:
        if "magic" not in data or str(data["magic"]) != MAGIC:
            raise ModelFormatError("not a bintreegp model file")
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format version {version}")

        encoding = _encoding_from(data, "enc_")
        train_bits = data["train_bits"]
        y_mean = float(data["y_mean"])
        y_std = float(data["y_std"])

        from .encoding import build_partitions  # deterministic rebuild

        members = []
        for k in range(int(data["n_members"])):
            prefix = f"member{k}_"
            params = params_from_phi(
                data[f"{prefix}phi"], float(data[f"{prefix}noise"])
            )
            P, _ = build_partitions(train_bits[:, params.bit_order])
            members.append(
                _member_from(data, prefix, train_bits, P, y_mean, y_std,
                             encoding)
            )

        extras = {}
        if "X_train" in data:
            extras["X_train"] = data["X_train"]
        if "y_train" in data:
            extras["y_train"] = data["y_train"]

        if str(data["kind"]) == "ensemble":
            model = EnsembleModel(
                members=members,
                weights=data["mixture_weights"],
                temperature=float(data["temperature"]),
                encoding=encoding,
            )
        else:
            model = members[0]
    return model, extras
