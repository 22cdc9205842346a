"""Scikit-learn estimator facade.

``LInfDistClassifier`` wraps network construction and the scheduled
training loop behind the usual fit / predict / decision_function surface,
so the model drops into pipelines, grid search and cross-validation.  The
estimator works on flat feature vectors scaled to roughly [0, 1]; the image
pipeline (augmentation, datasets, checkpoints) lives in the CLI.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from .certify import certify_batch, margins_batch
from .network import build_network
from .schedules import TrainPlan
from .training import fit


class LInfDistClassifier(BaseEstimator, ClassifierMixin):
    """Classifier built from infinity-distance neurons, 1-Lipschitz by
    construction, with margin-based robustness certificates.

    Parameters mirror the training recipe: the exponent relaxes from
    ``p_start`` to ``p_end`` over ``e2`` epochs (after ``e1`` warmup epochs)
    and finishes at infinity for ``e3`` epochs.  ``head_width > 0`` appends
    a small tanh MLP trained with the interval-bound loss instead of the
    hinge.
    """

    def __init__(self, hidden_width=64, depth=2, head_width=0, loss="hinge",
                 hinge_t=0.5, hinge_variant="max", kappa=0.5, eps_train=0.1,
                 e1=2, e2=8, e3=2, p_start=8.0, p_end=1000.0, lr=0.02,
                 weight_decay=0.005, batch_size=128, momentum=0.1,
                 identity_init=True, c0=-10.0, seed=0):
        self.hidden_width = hidden_width
        self.depth = depth
        self.head_width = head_width
        self.loss = loss
        self.hinge_t = hinge_t
        self.hinge_variant = hinge_variant
        self.kappa = kappa
        self.eps_train = eps_train
        self.e1 = e1
        self.e2 = e2
        self.e3 = e3
        self.p_start = p_start
        self.p_end = p_end
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.momentum = momentum
        self.identity_init = identity_init
        self.c0 = c0
        self.seed = seed

    def _arch(self):
        arch = f"dist:{self.hidden_width}x{self.depth}"
        if self.head_width:
            arch += f"+mlp:{self.head_width}"
        return arch

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        loss = self.loss
        if self.head_width and loss == "hinge":
            loss = "ibp"
        if loss == "ibp" and not self.head_width:
            raise ValueError("ibp loss needs head_width > 0")
        self.net_ = build_network(self._arch(), X.shape[1], len(self.classes_),
                                  seed=self.seed, identity=self.identity_init,
                                  c0=self.c0, momentum=self.momentum)
        plan = TrainPlan(e1=self.e1, e2=self.e2, e3=self.e3,
                         p_start=self.p_start, p_end=self.p_end, lr0=self.lr,
                         eps_train=self.eps_train, kappa=self.kappa,
                         hinge_t=self.hinge_t, weight_decay=self.weight_decay,
                         batch_size=self.batch_size, seed=self.seed,
                         hinge_variant=self.hinge_variant)
        _, self.history_ = fit(self.net_, X, y_idx.astype(np.int64), plan,
                               loss_kind=loss)
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("fit the classifier first")

    def decision_function(self, X):
        self._check_fitted()
        X = check_array(X, dtype=np.float32)
        return self.net_.logits(X, p=np.inf)

    def predict(self, X):
        self._check_fitted()
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def certified_radius(self, X):
        """Per-example lower bound on the prediction-stability radius
        (half the logit margin); only exact for pure distance nets."""
        self._check_fitted()
        if self.head_width:
            raise ValueError("margin radii apply to pure nets; use certify()")
        return margins_batch(self.decision_function(X)) / 2.0

    def certify(self, X, y, eps):
        """Per-example certified robustness of the correct prediction."""
        self._check_fitted()
        X = check_array(X, dtype=np.float32)
        y_idx = np.searchsorted(self.classes_, y)
        certified, _ = certify_batch(self.net_, X, y_idx, eps)
        return certified
