"""Random-forest proximity stratification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import StrataAssignment, compact_strata
from ..seeds import derive_seed
from .forest import Forest, ForestConfig, Tree, fit_forest, synthesize_second_class
from .proximity import ProximityMatrix, proximity
from .ward import Dendrogram, cut_dendrogram, ward_cut, ward_linkage


@dataclass(frozen=True, eq=False)
class RFClustering:
    """Everything needed to cut the Ward tree at any K without refitting."""

    proximity: ProximityMatrix
    dendrogram: Dendrogram
    synth_seed: int
    forest_seed: int
    oob_error: float | None = None

    def strata(self, K: int, t=None) -> StrataAssignment:
        return compact_strata(cut_dendrogram(self.dendrogram, K), t)


def rf_cluster(x, cfg: ForestConfig, categorical=None, workers: int = 1) -> RFClustering:
    """Synthesize the contrast class, grow the forest, and build the Ward tree
    on 1 - proximity between the real rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    synth_seed = derive_seed(cfg.seed, 0)
    forest_seed = derive_seed(cfg.seed, 1)
    aug, labels = synthesize_second_class(x, synth_seed)
    fcfg = ForestConfig(cfg.n_trees, cfg.mtry, cfg.min_leaf, cfg.max_depth, forest_seed,
                        cfg.proximity_mode)
    forest = fit_forest(aug, labels, fcfg, categorical=categorical, workers=workers)
    prox = proximity(forest, x, cfg.proximity_mode, workers=workers)
    return RFClustering(prox, ward_linkage(prox.distance()), synth_seed, forest_seed)


__all__ = [
    "Forest", "ForestConfig", "Tree", "fit_forest", "synthesize_second_class",
    "ProximityMatrix", "proximity", "Dendrogram", "ward_linkage", "cut_dendrogram", "ward_cut",
    "RFClustering", "rf_cluster",
]
