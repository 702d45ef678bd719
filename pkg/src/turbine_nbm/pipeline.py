"""Family registry, default hyperparameters and the split/normalise/fit path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .knn import fit_knn
from .mlp import MlpArchitecture, TrainConfig, train_mlp
from .model_core import Regressor, attach_normalization
from .scada_data import (
    TARGET_LABELS,
    SCADADataset,
    SplitIndices,
    apply_normalizer,
    build_design_matrices,
    chronological_split,
    fit_normalizer,
)
from .trees import ForestHyperparams, TreeHyperparams, fit_forest, fit_tree

FAMILIES = ("tree", "forest", "knn", "mlp")
FAMILY_NAMES = {"tree": "Decision tree", "forest": "Random forest", "knn": "KNN", "mlp": "MLP"}

_MLP_TRAINING = {"activation": "relu", "batch_norm": True, "batch_size": 64, "max_epochs": 200,
                 "patience": 20, "learning_rate": 1e-3}

# Multi-target (all four channels) and single-target (power only) settings.
DEFAULT_HYPERPARAMS = {
    "multi": {
        "tree": {"max_depth": 7, "min_samples_split": 105, "min_samples_leaf": 28,
                 "split_weighting": "count_weighted"},
        "forest": {"tree_count": 150, "max_depth": 7, "min_samples_split": 120,
                   "min_samples_leaf": 30, "split_weighting": "count_weighted", "max_features": 0},
        "knn": {"K": 45},
        "mlp": {"hidden": (17, 8, 17), **_MLP_TRAINING},
    },
    "single": {
        "tree": {"max_depth": 9, "min_samples_split": 80, "min_samples_leaf": 28,
                 "split_weighting": "count_weighted"},
        "forest": {"tree_count": 150, "max_depth": 9, "min_samples_split": 90,
                   "min_samples_leaf": 30, "split_weighting": "count_weighted", "max_features": 0},
        "knn": {"K": 33},
        "mlp": {"hidden": (17, 14, 17), **_MLP_TRAINING},
    },
}


def default_params(family: str, single_target: bool = False) -> dict:
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; choose from {', '.join(FAMILIES)}")
    return dict(DEFAULT_HYPERPARAMS["single" if single_target else "multi"][family])


def resolve_params(family: str, overrides=None, single_target=False) -> dict:
    """Defaults updated with ``overrides``; string values are coerced to the default's type."""
    params = default_params(family, single_target)
    for key, value in (overrides or {}).items():
        if key not in params:
            raise ValueError(f"unknown hyperparameter {key!r} for {family}; "
                             f"known: {', '.join(sorted(params))}")
        params[key] = _coerce(value, params[key], key)
    return params


def _coerce(value, like, key):
    if not isinstance(value, str):
        return tuple(value) if isinstance(like, tuple) else value
    text = value.strip()
    try:
        if isinstance(like, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise ValueError(f"bad value {value!r} for hyperparameter {key!r}") from None
    return text


def fit_family(family, params, X_train, Y_train, X_val=None, Y_val=None, seed=0, n_jobs=1) -> Regressor:
    """Fit one model family on normalised arrays with fully resolved ``params``."""
    if family == "tree":
        hp = TreeHyperparams(params["max_depth"], params["min_samples_split"],
                             params["min_samples_leaf"], params["split_weighting"])
        return fit_tree(X_train, Y_train, hp)
    if family == "forest":
        tree = TreeHyperparams(params["max_depth"], params["min_samples_split"],
                               params["min_samples_leaf"], params["split_weighting"])
        hp = ForestHyperparams(params["tree_count"], tree, seed, params["max_features"] or None)
        return fit_forest(X_train, Y_train, hp, n_jobs=n_jobs)
    if family == "knn":
        return fit_knn(X_train, Y_train, params["K"])
    if family == "mlp":
        if X_val is None:
            raise ValueError("mlp training needs a validation split")
        Y_train = np.asarray(Y_train)
        n = 1 if Y_train.ndim == 1 else Y_train.shape[1]
        arch = MlpArchitecture((np.shape(X_train)[1], *params["hidden"], n), params["activation"],
                               (params["batch_norm"],) * len(params["hidden"]))
        cfg = TrainConfig(params["batch_size"], params["max_epochs"], params["patience"], seed,
                          params["learning_rate"])
        return train_mlp(X_train, Y_train, X_val, Y_val, arch, cfg)
    raise ValueError(f"unknown model family {family!r}; choose from {', '.join(FAMILIES)}")


@dataclass(frozen=True)
class PreparedData:
    X_train: np.ndarray
    Y_train: np.ndarray
    X_val: np.ndarray
    Y_val: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray
    split: SplitIndices
    input_norm: object
    target_norm: object
    direction_mode: str
    targets: tuple
    ratios: tuple = (0.6, 0.2, 0.2)

    def part(self, name):
        return {"train": (self.X_train, self.Y_train), "validation": (self.X_val, self.Y_val),
                "test": (self.X_test, self.Y_test)}[name]


def prepare(ds: SCADADataset, direction_mode="cos", ratios=(0.6, 0.2, 0.2), targets=TARGET_LABELS,
            shuffle=False, seed=None) -> PreparedData:
    """Design matrices, split, and normalisation fitted on the training rows only."""
    targets = tuple(targets)
    unknown = [t for t in targets if t not in TARGET_LABELS]
    if unknown:
        raise ValueError(f"unknown target(s) {unknown}; choose from {TARGET_LABELS}")
    dm = build_design_matrices(ds, direction_mode)
    Y = dm.Y[:, [TARGET_LABELS.index(t) for t in targets]]
    split = chronological_split(ds.m, ratios, shuffle=shuffle, seed=seed)
    tr, va, te = split.rows("train"), split.rows("validation"), split.rows("test")
    in_norm = fit_normalizer(dm.X, tr, dm.input_labels)
    out_norm = fit_normalizer(Y, tr, targets)
    Xn = apply_normalizer(dm.X, in_norm)
    Yn = apply_normalizer(Y, out_norm)
    return PreparedData(Xn[tr], Yn[tr], Xn[va], Yn[va], Xn[te], Yn[te], split, in_norm, out_norm,
                        direction_mode, targets, tuple(float(r) for r in ratios))


def train_on(data: PreparedData, family, params=None, seed=0, n_jobs=1) -> Regressor:
    single = len(data.targets) == 1
    params = resolve_params(family, params, single)
    model = fit_family(family, params, data.X_train, data.Y_train, data.X_val, data.Y_val, seed,
                       n_jobs)
    model.metadata = type(model.metadata)(**{**model.metadata.__dict__, "hyperparameters": params,
                                             "seed": seed})
    return attach_normalization(model, data.input_norm, data.target_norm,
                                direction_mode=data.direction_mode, split_ratios=data.ratios)


def prepare_for_model(ds: SCADADataset, model: Regressor) -> PreparedData:
    """Rebuild a model's split on ``ds`` and normalise with the model's stored parameters."""
    meta = model.metadata
    if meta.input_norm is None or meta.target_norm is None:
        raise ValueError("model carries no normalisation parameters")
    mode = meta.extra.get("direction_mode", "cos")
    ratios = tuple(meta.extra.get("split_ratios", (0.6, 0.2, 0.2)))
    dm = build_design_matrices(ds, mode)
    if tuple(dm.input_labels) != tuple(meta.input_norm.labels):
        raise ValueError(f"model inputs {meta.input_norm.labels} do not match data {dm.input_labels}")
    targets = tuple(meta.target_norm.labels)
    Y = dm.Y[:, [TARGET_LABELS.index(t) for t in targets]]
    split = chronological_split(ds.m, ratios)
    tr, va, te = split.rows("train"), split.rows("validation"), split.rows("test")
    Xn = apply_normalizer(dm.X, meta.input_norm)
    Yn = apply_normalizer(Y, meta.target_norm)
    return PreparedData(Xn[tr], Yn[tr], Xn[va], Yn[va], Xn[te], Yn[te], split, meta.input_norm,
                        meta.target_norm, mode, targets, ratios)
