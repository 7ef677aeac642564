"""Dataset container, column roles, and CSV ingestion.

A Dataset holds the outcome y, treatment matrix d, control matrix x,
optional instrument matrix z, and an optional integer cluster id per row.
Arrays are float64, validated to be finite, and frozen (read-only) so a
Dataset can be shared across worker threads.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


class ModelKind(enum.Enum):
    """The five supported econometric models."""

    PARTIAL = "partial"
    INTERACTIVE = "interactive"
    IV = "iv"
    FIV = "fiv"
    INTERACTIVE_IV = "interactiveiv"


# Models that identify effects through instruments.
IV_MODELS = (ModelKind.IV, ModelKind.FIV, ModelKind.INTERACTIVE_IV)
# Models that require a scalar treatment.
SCALAR_D_MODELS = (ModelKind.INTERACTIVE, ModelKind.FIV, ModelKind.INTERACTIVE_IV)
# Models that require a binary treatment.
BINARY_D_MODELS = (ModelKind.INTERACTIVE, ModelKind.INTERACTIVE_IV)


class CefKind(enum.Enum):
    """Conditional expectations that can appear in the first stage.

    The *_D0/*_D1 and *_Z0/*_Z1 kinds are fit on the indicated subsample
    only (untreated/treated, or instrument off/on) but predicted for every
    observation.
    """

    Y_X = "E[Y|X]"
    Y_X_D0 = "E[Y|X,D=0]"
    Y_X_D1 = "E[Y|X,D=1]"
    Y_X_Z0 = "E[Y|X,Z=0]"
    Y_X_Z1 = "E[Y|X,Z=1]"
    D_X = "E[D|X]"
    D_XZ = "E[D|X,Z]"
    D_XZ0 = "E[D|X,Z=0]"
    D_XZ1 = "E[D|X,Z=1]"
    Z_X = "E[Z|X]"


# Stable small integers for seed derivation.
CEF_CODE = {kind: i for i, kind in enumerate(CefKind)}

# Which role the CEF regresses on: "x" or "xz".
CEF_FEATURES = {
    CefKind.Y_X: "x",
    CefKind.Y_X_D0: "x",
    CefKind.Y_X_D1: "x",
    CefKind.Y_X_Z0: "x",
    CefKind.Y_X_Z1: "x",
    CefKind.D_X: "x",
    CefKind.D_XZ: "xz",
    CefKind.D_XZ0: "x",
    CefKind.D_XZ1: "x",
    CefKind.Z_X: "x",
}


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(arr.T).T))
        row = int(bad[0][0])
        raise DataError(f"column role '{name}' has a non-finite value at row {row + 1}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Validated, immutable estimation sample.

    y : (n,) outcome
    d : (n, p_d) treatments, p_d >= 1
    x : (n, p_x) controls
    z : (n, p_z) instruments, possibly p_z = 0
    cluster : optional (n,) integer cluster ids
    names : column labels per role
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray
    cluster: np.ndarray | None = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim == 1:
            d = d.reshape(-1, 1)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        z = np.asarray(self.z, dtype=np.float64)
        if z.size == 0:
            z = np.empty((len(y), 0), dtype=np.float64)
        elif z.ndim == 1:
            z = z.reshape(-1, 1)

        n = len(y)
        if n < 1:
            raise DataError("dataset is empty")
        for name, arr in (("d", d), ("x", x), ("z", z)):
            if arr.shape[0] != n:
                raise DataError(f"role '{name}' has {arr.shape[0]} rows, expected {n}")
        if d.shape[1] < 1:
            raise DataError("at least one treatment column is required")
        _check_finite("y", y)
        _check_finite("d", d)
        _check_finite("x", x)
        _check_finite("z", z)

        cluster = self.cluster
        if cluster is not None:
            cluster = np.asarray(cluster, dtype=np.int64).reshape(-1)
            if len(cluster) != n:
                raise DataError(f"cluster ids have {len(cluster)} rows, expected {n}")
            cluster.flags.writeable = False

        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "d", _freeze(d))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "z", _freeze(z))
        object.__setattr__(self, "cluster", cluster)

        names = dict(self.names) if self.names else {}
        names.setdefault("y", "y")
        names.setdefault("d", [f"d{j + 1}" for j in range(d.shape[1])])
        names.setdefault("x", [f"x{j + 1}" for j in range(x.shape[1])])
        names.setdefault("z", [f"z{j + 1}" for j in range(z.shape[1])])
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p_d(self) -> int:
        return self.d.shape[1]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    def xz(self) -> np.ndarray:
        """Controls and instruments side by side (features for E[D|X,Z])."""
        return np.column_stack([self.x, self.z])

    def validate_for_model(self, model: ModelKind) -> None:
        """Raise DataError unless this dataset satisfies the model's role
        and coding requirements."""
        if model in IV_MODELS and self.p_z == 0:
            raise DataError(f"model '{model.value}' requires role Z (instruments)")
        if model not in IV_MODELS and self.p_z > 0:
            raise DataError(f"model '{model.value}' does not take instruments")
        if model in SCALAR_D_MODELS and self.p_d != 1:
            raise DataError(f"model '{model.value}' requires a single treatment column")
        if model in BINARY_D_MODELS:
            _require_binary(self.d[:, 0], self.names["d"][0], "treatment")
        if model is ModelKind.INTERACTIVE_IV:
            if self.p_z != 1:
                raise DataError("model 'interactiveiv' requires a single instrument column")
            _require_binary(self.z[:, 0], self.names["z"][0], "instrument")


def _require_binary(col: np.ndarray, name: str, role: str) -> None:
    vals = np.unique(col)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        bad = vals[~np.isin(vals, (0.0, 1.0))][0]
        raise DataError(f"{role} column '{name}' must be binary {{0,1}}, found value {bad!r}")


def required_cefs(model: ModelKind, p_d: int = 1, p_z: int = 0) -> list[tuple[CefKind, int]]:
    """The (CEF kind, target column) slots a model needs, in report order."""
    if model is ModelKind.PARTIAL:
        return [(CefKind.Y_X, 0)] + [(CefKind.D_X, j) for j in range(p_d)]
    if model is ModelKind.INTERACTIVE:
        return [(CefKind.Y_X_D0, 0), (CefKind.Y_X_D1, 0), (CefKind.D_X, 0)]
    if model is ModelKind.IV:
        return (
            [(CefKind.Y_X, 0)]
            + [(CefKind.D_X, j) for j in range(p_d)]
            + [(CefKind.Z_X, j) for j in range(p_z)]
        )
    if model is ModelKind.FIV:
        return [(CefKind.Y_X, 0), (CefKind.D_XZ, 0), (CefKind.D_X, 0)]
    if model is ModelKind.INTERACTIVE_IV:
        return [
            (CefKind.Y_X_Z0, 0),
            (CefKind.Y_X_Z1, 0),
            (CefKind.D_XZ0, 0),
            (CefKind.D_XZ1, 0),
            (CefKind.Z_X, 0),
        ]
    raise ValueError(f"unknown model {model}")


def cef_target(data: Dataset, kind: CefKind, col: int) -> np.ndarray:
    """Regressand of a CEF."""
    if kind in (CefKind.Y_X, CefKind.Y_X_D0, CefKind.Y_X_D1, CefKind.Y_X_Z0, CefKind.Y_X_Z1):
        return data.y
    if kind in (CefKind.D_X, CefKind.D_XZ, CefKind.D_XZ0, CefKind.D_XZ1):
        return data.d[:, col]
    if kind is CefKind.Z_X:
        return data.z[:, col]
    raise ValueError(f"unknown CEF kind {kind}")


def cef_arm_mask(data: Dataset, kind: CefKind) -> np.ndarray | None:
    """Subsample restriction for split CEF kinds; None for unrestricted."""
    if kind is CefKind.Y_X_D0:
        return data.d[:, 0] == 0.0
    if kind is CefKind.Y_X_D1:
        return data.d[:, 0] == 1.0
    if kind in (CefKind.Y_X_Z0, CefKind.D_XZ0):
        return data.z[:, 0] == 0.0
    if kind in (CefKind.Y_X_Z1, CefKind.D_XZ1):
        return data.z[:, 0] == 1.0
    return None


def cef_features(data: Dataset, kind: CefKind) -> np.ndarray:
    """Regressors of a CEF (controls, or controls plus instruments)."""
    return data.xz() if CEF_FEATURES[kind] == "xz" else data.x


def _parse_cell(raw: str, row: int, colname: str) -> float:
    try:
        val = float(raw)
    except ValueError:
        raise DataError(
            f"non-numeric value {raw!r} at data row {row}, column '{colname}'"
        ) from None
    if not math.isfinite(val):
        raise DataError(f"non-finite value {raw!r} at data row {row}, column '{colname}'")
    return val


def load_csv(path: str, roles: dict, model: ModelKind | None = None) -> Dataset:
    """Read a comma-delimited UTF-8 file with a header row into a Dataset.

    roles maps "y" to a column name, "d"/"x"/"z" to lists of column names
    (z optional), and optionally "cluster" to a column of integer ids.
    Row order is preserved exactly. If a model is given, model-specific
    coding rules (binary treatment/instrument) are enforced immediately.
    """
    y_name = roles["y"]
    d_names = list(roles.get("d", []))
    x_names = list(roles.get("x", []))
    z_names = list(roles.get("z", []) or [])
    cluster_name = roles.get("cluster")
    if isinstance(y_name, (list, tuple)):
        if len(y_name) != 1:
            raise DataError("role Y must map to exactly one column")
        y_name = y_name[0]
    if not d_names:
        raise DataError("role D requires at least one column")
    if not x_names:
        raise DataError("role X requires at least one column")

    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty (header row required)") from None
        col_of = {name: i for i, name in enumerate(header)}
        wanted = [y_name] + d_names + x_names + z_names
        if cluster_name:
            wanted.append(cluster_name)
        for name in wanted:
            if name not in col_of:
                raise DataError(f"{path}: column '{name}' not found in header")

        rows = []
        for irow, rec in enumerate(reader, start=1):
            if len(rec) != len(header):
                raise DataError(f"{path}: data row {irow} has {len(rec)} fields, expected {len(header)}")
            rows.append(rec)

    if not rows:
        raise DataError(f"{path}: no data rows")

    def pull(name):
        j = col_of[name]
        return np.array([_parse_cell(rec[j], i + 1, name) for i, rec in enumerate(rows)])

    y = pull(y_name)
    d = np.column_stack([pull(nm) for nm in d_names])
    x = np.column_stack([pull(nm) for nm in x_names])
    if z_names:
        z = np.column_stack([pull(nm) for nm in z_names])
    else:
        z = np.empty((len(y), 0))
    cluster = None
    if cluster_name:
        raw = pull(cluster_name)
        rounded = np.rint(raw)
        if not np.allclose(raw, rounded):
            raise DataError(f"cluster column '{cluster_name}' must contain integer ids")
        cluster = rounded.astype(np.int64)

    data = Dataset(
        y=y, d=d, x=x, z=z, cluster=cluster,
        names={"y": y_name, "d": d_names, "x": x_names, "z": z_names, "cluster": cluster_name},
    )
    if model is not None:
        data.validate_for_model(model)
    return data


def write_csv(data: Dataset, path: str) -> None:
    """Write a Dataset back to CSV. Floats use shortest round-trip
    formatting, so load_csv(write_csv(ds)) reproduces the arrays bitwise."""
    header = [data.names["y"]] + list(data.names["d"]) + list(data.names["x"]) + list(data.names["z"])
    cols = [data.y] + [data.d[:, j] for j in range(data.p_d)]
    cols += [data.x[:, j] for j in range(data.p_x)]
    cols += [data.z[:, j] for j in range(data.p_z)]
    if data.cluster is not None:
        header.append(data.names.get("cluster") or "cluster")
        cols.append(data.cluster)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            writer.writerow([repr(float(c[i])) if c.dtype.kind == "f" else int(c[i]) for c in cols])
