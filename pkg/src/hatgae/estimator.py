"""scikit-learn style front end.

:class:`HATGAE` is a transformer whose input ``X`` is a :class:`~hatgae.graph.Graph`:
``fit`` runs self-supervised training and ``transform`` returns frozen-encoder
embeddings, so it composes with sklearn pipelines and model selection::

    >>> from hatgae import HATGAE, LinearProbe, SbmConfig, sbm_generate
    >>> g = sbm_generate(SbmConfig(n_nodes=60, feat_dim=8, seed=1))
    >>> emb = HATGAE(epochs=3, num=10, hidden=8).fit_transform(g)
    >>> emb.shape
    (60, 8)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import export_embeddings
from .graph import Graph
from .training import TrainConfig, prepare, train


def check_graph(g, *, require_labels=False, require_split=False):
    """Validate an estimator input and return it.

    Raises ``TypeError`` for non-graph input and ``ValueError`` for a graph
    lacking labels/split when they are required.
    """
    if not isinstance(g, Graph):
        raise TypeError(f"expected a hatgae Graph, got {type(g).__name__}; "
                        "build one with Graph.from_edges or load_graph_bundle")
    if g.n_nodes == 0:
        raise ValueError("graph has no nodes")
    if g.n_dims < 2:
        raise ValueError(f"need at least 2 feature dimensions, got {g.n_dims}")
    if require_labels and g.labels is None:
        raise ValueError("graph has no labels")
    if require_split and g.split is None:
        raise ValueError("graph has no train/val/test split")
    return g


def check_feature_width(g, n_dims):
    if g.n_dims != n_dims:
        raise ValueError(f"graph has {g.n_dims} feature dims, estimator was fitted on {n_dims}")


class HATGAE(TransformerMixin, BaseEstimator):
    """Graph auto-encoder with hierarchical adaptive masking and trainable corruption.

    Parameters mirror :class:`~hatgae.training.TrainConfig`; see there for
    their meaning.

    Attributes
    ----------
    params_ : ModelParams
        Trained encoder/decoder weights, PReLU slopes and noise row.
    report_ : TrainReport
        Per-epoch loss log.
    schedule_ : MaskSchedule or None
        Masking schedule used during training.
    n_features_in_ : int
        Feature width of the training graph.
    """

    def __init__(self, pf=0.1, pn=0.5, num=200, epochs=500, lr=0.001, weight_decay=0.0,
                 hidden=64, heads=4, seed=0, centrality="indegree", variant="full",
                 stop_grad_target=False, lr_schedule="constant"):
        self.pf = pf
        self.pn = pn
        self.num = num
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.hidden = hidden
        self.heads = heads
        self.seed = seed
        self.centrality = centrality
        self.variant = variant
        self.stop_grad_target = stop_grad_target
        self.lr_schedule = lr_schedule

    def train_config(self):
        return TrainConfig(**self.get_params()).validate()

    def fit(self, X, y=None):
        g = check_graph(X)
        cfg = self.train_config()
        self.schedule_ = prepare(g, cfg).schedule
        self.params_, self.report_ = train(g, cfg)
        self.n_features_in_ = g.n_dims
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        g = check_graph(X)
        check_feature_width(g, self.n_features_in_)
        return export_embeddings(g, self.params_)

    @property
    def loss_curve_(self):
        check_is_fitted(self, "report_")
        return np.asarray(self.report_.losses)
