"""Supervised learners behind a uniform fit/predict interface.

Any object with ``fit(X, y, seed) -> model`` and a ``label`` works as a
learner; fitted models expose ``predict(X)``. The built-ins are OLS,
cross-validated ridge and lasso, random forests, and gradient boosted
trees, each optionally composed with a feature transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError
from ..features import TRANSFORMS
from .base import ols_solve
from .linear import LassoCvLearner, LinearModel, OlsLearner, RidgeCvLearner
from .trees import (
    BoostModel,
    EarlyStop,
    ForestModel,
    GradientBoostLearner,
    RandomForestLearner,
)

LEARNER_KINDS = {
    "ols": OlsLearner,
    "ridgecv": RidgeCvLearner,
    "lassocv": LassoCvLearner,
    "rf": RandomForestLearner,
    "gradboost": GradientBoostLearner,
}

# Named hyperparameter bundles for the common regularization levels.
LEARNER_PRESETS = {
    "rf_low": ("rf", {"max_depth": 10}),
    "rf_medium": ("rf", {"max_depth": 6}),
    "rf_high": ("rf", {"max_depth": 2}),
    "gb_low": ("gradboost", {"learning_rate": 0.3}),
    "gb_medium": ("gradboost", {"learning_rate": 0.1}),
    "gb_high": ("gradboost", {"learning_rate": 0.01}),
}


@dataclass
class LearnerSpec:
    """Declarative learner description used by configs and the pipeline.

    kind        one of LEARNER_KINDS
    params      kind-specific keyword arguments, validated at build time
    transform   feature expansion applied inside the learner
    seed_offset folded into fit seeds so duplicate specs decorrelate
    label       report name; defaults to kind (plus transform if not base)
    """

    kind: str
    params: dict = field(default_factory=dict)
    transform: str = "base"
    seed_offset: int = 0
    label: str | None = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ConfigError(
                f"unknown learner kind {self.kind!r} (expected one of {sorted(LEARNER_KINDS)})"
            )
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown feature transform {self.transform!r}")
        self.build()  # validate hyperparameters eagerly

    def build(self):
        """Instantiate the learner object."""
        cls = LEARNER_KINDS[self.kind]
        params = dict(self.params)
        es = params.get("early_stop")
        if isinstance(es, dict):
            params["early_stop"] = EarlyStop(**es)
        elif es is False:
            params["early_stop"] = None
        try:
            learner = cls(transform=self.transform, label=self.label, **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid parameters for learner {self.kind!r}: {exc}") from exc
        return learner

    @property
    def report_label(self) -> str:
        return self.label or self.build().label

    @classmethod
    def from_config(cls, cfg: dict) -> "LearnerSpec":
        """Build a spec from a config mapping, resolving presets."""
        cfg = dict(cfg)
        preset = cfg.pop("preset", None)
        if preset is not None:
            if preset not in LEARNER_PRESETS:
                raise ConfigError(f"unknown learner preset {preset!r}")
            kind, preset_params = LEARNER_PRESETS[preset]
            params = dict(preset_params)
            params.update(cfg.pop("params", {}))
            spec = cls(
                kind=kind,
                params=params,
                transform=cfg.pop("transform", "base"),
                seed_offset=cfg.pop("seed_offset", 0),
                label=cfg.pop("label", preset),
            )
        else:
            kind = cfg.pop("kind", None)
            if kind is None:
                raise ConfigError("learner config needs a 'kind' or 'preset' entry")
            spec = cls(
                kind=kind,
                params=cfg.pop("params", {}),
                transform=cfg.pop("transform", "base"),
                seed_offset=cfg.pop("seed_offset", 0),
                label=cfg.pop("label", None),
            )
        if cfg:
            raise ConfigError(f"unknown learner config field(s): {sorted(cfg)}")
        return spec


__all__ = [
    "LearnerSpec",
    "LEARNER_KINDS",
    "LEARNER_PRESETS",
    "OlsLearner",
    "RidgeCvLearner",
    "LassoCvLearner",
    "RandomForestLearner",
    "GradientBoostLearner",
    "EarlyStop",
    "LinearModel",
    "ForestModel",
    "BoostModel",
    "ols_solve",
]
