"""Per-case preparation: cached features and graphs, sliced into model inputs.

Node features are pointwise and Surf2Vol neighborhoods only look at the
(never subsampled) surface, so both are computed once on the full mesh and
restricted to any subset by row selection.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .basis import HarmonicTables, SineBasisConfig
from .features import FeatureContext, FeatureVariant, edge_features_from_displacement, node_features
from .graph import KdTree2, cap_neighbors, edge_geometry, radius_graph, radius_neighbors, surf2vol_graph
from .mesh import FieldId, MeshCase
from .net import ModelConfig, ModelInputs


class PreparedCase:
    def __init__(
        self,
        case: MeshCase,
        variant: FeatureVariant,
        cfg: ModelConfig,
        sine: SineBasisConfig,
        tables: Optional[HarmonicTables] = None,
    ):
        self.ctx = FeatureContext.build(case, sine, tables)
        self.case = self.ctx.case
        self.variant = variant
        self.cfg = cfg
        self.node_x = node_features(self.ctx, variant)
        if self.node_x.shape[1] != cfg.node_dim:
            raise ValueError(f"variant {variant.name} gives {self.node_x.shape[1]} node features, model expects {cfg.node_dim}")
        sidx = self.case.surface_idx
        self.surface_idx = sidx
        if cfg.uses_surface:
            spts = self.case.points[sidx]
            self.surface_tree = KdTree2(spts)
            g = surf2vol_graph(self.case, cfg.k, tree=self.surface_tree)
            local = np.full(self.case.n_points, -1, dtype=np.int64)
            local[sidx] = np.arange(len(sidx))
            self.s2v_global = g.neighbors
            self.s2v_local = local[g.neighbors]
            disp = self.case.points[g.neighbors].reshape(-1, 2) - np.repeat(self.case.points, cfg.k, axis=0)
            self.s2v_e = edge_features_from_displacement(self.ctx, disp, variant).reshape(self.case.n_points, cfg.k, -1)
            if self.s2v_e.shape[2] != cfg.edge_dim:
                raise ValueError(f"variant {variant.name} gives {self.s2v_e.shape[2]} edge features, model expects {cfg.edge_dim}")
            self.surf_neighbors = radius_neighbors(spts, cfg.surf_radius, tree=self.surface_tree)

    @property
    def n_points(self) -> int:
        return self.case.n_points

    def targets(self, fid: FieldId) -> np.ndarray:
        return self.case.field_values(fid)

    def surface_graph(self, seed):
        src, dst = cap_neighbors(self.surf_neighbors, self.cfg.surf_max_neighbors, seed)
        spts = self.case.points[self.surface_idx]
        return src, dst, edge_geometry(spts[src], spts[dst])

    def inputs(self, keep: Optional[np.ndarray] = None, graph_seed=0) -> ModelInputs:
        """Model inputs for the points ``keep`` (sorted indices; all points when None).

        ``keep`` must contain every surface point for the graph-based models.
        """
        cfg = self.cfg
        sel = slice(None) if keep is None else keep
        inp = ModelInputs(node_x=self.node_x[sel])
        if cfg.uses_surface:
            src, dst, e = self.surface_graph(graph_seed)
            inp.surf_x = self.node_x[self.surface_idx]
            inp.surf_src, inp.surf_dst, inp.surf_e = src, dst, e
            inp.s2v_src = self.s2v_local[sel].reshape(-1)
            inp.s2v_e = self.s2v_e[sel].reshape(-1, cfg.edge_dim)
            inp.k = cfg.k
        if cfg.uses_volume_graph:
            pts = self.case.points[sel]
            vg = radius_graph(pts, cfg.vol_radius, cfg.vol_max_neighbors, graph_seed)
            inp.vol_src, inp.vol_dst, inp.vol_e = vg.src, vg.dst, vg.features
        return inp
