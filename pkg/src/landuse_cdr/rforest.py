"""Random forest with class-weighted voting, stratified cross-validation and weight search.

Random streams
--------------
Every tree ``k`` of a forest grown under stream tag ``s`` draws from
``numpy.random.SeedSequence([master_seed, s, k])``: a PCG64 generator built
from it draws the bootstrap sample, and its first 64-bit state word seeds the
splitmix64 node streams used for feature subsampling (see ``_kernels``). The
full forest uses tag 0, cross-validation fold ``f`` uses tag ``f + 1``, and
fold assignment uses its own sequence ``[master_seed, FOLD_TAG]``. Results
therefore depend only on data, configuration and master seed, never on the
number of worker threads.

Vote weights
------------
A tree votes for the plurality class of the leaf it reaches. The weighted
score of class c is ``fraction_c * w_c`` and the prediction is the highest
score, with near-ties (relative 1e-12) going to the lower class code. Vote
thresholds ``t_c`` as tabulated in reports map to weights ``w_c = 1 / t_c``.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ConsistencyError
from .grid import LandUseClass, ZoningGrid
from .signal import N_FEATURES, FeatureMatrix

log = logging.getLogger(__name__)

FORMAT = "landuse-forest"
FORMAT_VERSION = 1
FOLD_TAG = 0xF01D
TIE_RTOL = 1e-12
OBJECTIVES = ("nonres_macro_recall", "macro_recall", "accuracy")


def default_weight_grid():
    grid = {c: (1.0, 2.0, 4.0, 8.0) for c in LandUseClass}
    grid[LandUseClass.RESIDENTIAL] = (1.0,)
    return grid


@dataclass
class ForestConfig:
    n_trees: int = 500
    mtry: int = 7
    min_leaf: int = 5
    k_folds: int = 5
    master_seed: int = 0
    threads: int = 1
    objective: str = "nonres_macro_recall"
    weight_grid: dict = field(default_factory=default_weight_grid)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if not 1 <= self.mtry <= N_FEATURES:
            raise ConfigError(f"mtry must lie in [1, {N_FEATURES}]")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be at least 1")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["weight_grid"] = {LandUseClass(c).name.lower(): list(v) for c, v in self.weight_grid.items()}
        d.pop("threads")
        return d


def weights_from_thresholds(thresholds) -> np.ndarray:
    t = np.asarray(thresholds, dtype=float)
    if (t <= 0).any():
        raise ConfigError("vote thresholds must be positive")
    return 1.0 / t


def thresholds_from_weights(weights) -> np.ndarray:
    """Inverse weights normalized to sum to one, the way vote thresholds are tabulated."""
    inv = 1.0 / np.asarray(weights, dtype=float)
    return inv / inv.sum()


@dataclass(frozen=True)
class Tree:
    """Preorder node arrays; ``feature`` is 0-based and -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    hist: np.ndarray
    seed: int

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def is_leaf(self) -> bool:
        return self.feature[0] < 0

    def apply(self, X) -> np.ndarray:
        """Index of the leaf reached by every row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_index(self, X) -> np.ndarray:
        return _kernels.leaf_classes(self.hist)[self.apply(X)]


def _tree_streams(master_seed: int, stream: int, index: int):
    ss = np.random.SeedSequence([int(master_seed), int(stream), int(index)])
    return np.random.Generator(np.random.PCG64(ss)), np.uint64(ss.generate_state(1, np.uint64)[0])


def bootstrap_sample(master_seed: int, stream: int, index: int, n: int) -> np.ndarray:
    """The bootstrap row multiset of tree ``index`` under the given stream."""
    rng, _ = _tree_streams(master_seed, stream, index)
    return rng.integers(0, n, n)


def train_tree(X, y, seed, n_classes=None, mtry=None, min_leaf=5, bootstrap=True,
               stream=0, index=0, order=None) -> Tree:
    """Grow a single Gini CART tree on a bootstrap sample of (X, y).

    ``y`` holds class indices 0..n_classes-1. With ``bootstrap=False`` the
    tree sees every row once.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("cannot train a tree on empty input")
    if len(X) != len(y):
        raise ValueError("X and y differ in length")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    mtry = min(X.shape[1], 7) if mtry is None else mtry
    rng, node_seed = _tree_streams(seed, stream, index)
    sample = rng.integers(0, len(X), len(X)) if bootstrap else np.arange(len(X))
    if order is None:
        order = _kernels.presort(X)
    parts = _kernels.grow_tree(X, y, sample, n_classes, mtry, min_leaf, node_seed, order)
    return Tree(*parts, seed=int(node_seed))


@dataclass(frozen=True)
class VoteTally:
    classes: tuple
    fractions: np.ndarray
    scores: np.ndarray

    @property
    def winner(self) -> LandUseClass:
        return LandUseClass(self.classes[weighted_argmax(self.scores[None, :])[0]])


def weighted_argmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax treating relative differences below 1e-12 as ties (lowest index wins)."""
    scores = np.atleast_2d(scores)
    best = scores.max(axis=1, keepdims=True)
    near = scores >= best - TIE_RTOL * np.abs(best)
    return np.argmax(near, axis=1)


class Forest:
    def __init__(self, trees, classes, weights=None, config: ForestConfig | None = None, stream=0):
        if not trees:
            raise ConfigError("a forest needs at least one tree")
        self.trees = list(trees)
        self.classes = tuple(int(c) for c in classes)
        self.config = config or ForestConfig(n_trees=len(trees))
        self.stream = stream
        self.weights = np.ones(len(self.classes)) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape != (len(self.classes),) or not (self.weights > 0).all():
            raise ConfigError("weights must be strictly positive, one per class")
        self._pack()

    def _pack(self):
        sizes = [t.n_nodes for t in self.trees]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self._feature = np.concatenate([t.feature for t in self.trees]).astype(np.int32)
        self._threshold = np.concatenate([t.threshold for t in self.trees])
        self._left = np.concatenate([t.left for t in self.trees]).astype(np.int32)
        self._right = np.concatenate([t.right for t in self.trees]).astype(np.int32)
        self._vote = np.concatenate([_kernels.leaf_classes(t.hist) for t in self.trees]).astype(np.int32)

    @property
    def n_trees(self):
        return len(self.trees)

    def with_weights(self, weights) -> "Forest":
        return Forest(self.trees, self.classes, weights, self.config, self.stream)

    def votes(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features per row, got {X.shape[1]}")
        return _kernels.count_votes(X, self._offsets, self._feature, self._threshold,
                                    self._left, self._right, self._vote, len(self.classes))

    def vote_fractions(self, X) -> np.ndarray:
        return self.votes(X) / self.n_trees

    def predict(self, X) -> np.ndarray:
        """Predicted class codes for every row of X."""
        idx = weighted_argmax(self.vote_fractions(X) * self.weights)
        return np.asarray(self.classes, dtype=np.int64)[idx]

    # -- serialization --------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "stream": self.stream,
            "config": self.config.to_dict(),
            "trees": [{"seed": t.seed, "feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
                       "left": t.left.tolist(), "right": t.right.tolist(), "hist": t.hist.tolist()}
                      for t in self.trees],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))

    @classmethod
    def from_json(cls, doc: dict) -> "Forest":
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise ConfigError(f"not a {FORMAT} v{FORMAT_VERSION} artifact")
        cfg = dict(doc["config"])
        cfg["weight_grid"] = {LandUseClass.parse(k): tuple(v) for k, v in cfg["weight_grid"].items()}
        n_classes = len(doc["classes"])
        trees = [Tree(np.asarray(t["feature"], dtype=np.int32), np.asarray(t["threshold"], dtype=float),
                      np.asarray(t["left"], dtype=np.int32), np.asarray(t["right"], dtype=np.int32),
                      np.asarray(t["hist"], dtype=np.int32).reshape(-1, n_classes), int(t["seed"]))
                 for t in doc["trees"]]
        return cls(trees, doc["classes"], doc["weights"], ForestConfig(**cfg), doc.get("stream", 0))

    @classmethod
    def load(cls, path) -> "Forest":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def predict(forest: Forest, x) -> tuple[LandUseClass, VoteTally]:
    """Classify one feature row, returning the winning class and its tally."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != N_FEATURES:
        raise ValueError(f"expected a single row of {N_FEATURES} features, got shape {x.shape}")
    frac = forest.vote_fractions(x[None, :])[0]
    tally = VoteTally(forest.classes, frac, frac * forest.weights)
    return tally.winner, tally


def fit_forest(X, codes, cfg: ForestConfig, stream: int = 0, classes=None) -> Forest:
    """Train ``cfg.n_trees`` trees on rows X with class codes ``codes``."""
    X = np.ascontiguousarray(X, dtype=float)
    codes = np.asarray(codes, dtype=np.int64)
    classes = tuple(sorted(set(codes.tolist()))) if classes is None else tuple(classes)
    lookup = {c: k for k, c in enumerate(classes)}
    y = np.array([lookup[c] for c in codes.tolist()], dtype=np.int64)
    order = _kernels.presort(X)
    mtry = min(cfg.mtry, X.shape[1])

    def grow(k):
        return train_tree(X, y, cfg.master_seed, len(classes), mtry, cfg.min_leaf,
                          stream=stream, index=k, order=order)

    workers = cfg.threads or None
    if workers == 1:
        trees = [grow(k) for k in range(cfg.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, range(cfg.n_trees)))
    return Forest(trees, classes, config=cfg, stream=stream)


def _labels_for(fm: FeatureMatrix, labels) -> np.ndarray:
    codes = fm.labels_from(labels) if isinstance(labels, ZoningGrid) else np.asarray(labels, dtype=np.int64)
    if len(codes) != len(fm):
        raise ConsistencyError("label count differs from feature rows")
    missing = np.nonzero(codes == 0)[0]
    if len(missing):
        cells = [tuple(c) for c in fm.cells[missing[:10]].tolist()]
        raise ConsistencyError(f"{len(missing)} active cells have no label, e.g. {cells}")
    return codes


def train_forest(fm: FeatureMatrix, labels, cfg: ForestConfig | None = None, weights=None) -> Forest:
    cfg = cfg or ForestConfig()
    codes = _labels_for(fm, labels)
    forest = fit_forest(fm.X, codes, cfg)
    return forest if weights is None else forest.with_weights(weights)


# -- cross-validation and weight search ----------------------------------------

def stratified_folds(codes, k: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin across folds."""
    codes = np.asarray(codes)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), FOLD_TAG])))
    folds = np.empty(len(codes), dtype=np.int64)
    offset = 0
    for c in sorted(set(codes.tolist())):
        idx = np.nonzero(codes == c)[0]
        if len(idx) < k:
            log.warning("class %s has %d rows, fewer than %d folds", c, len(idx), k)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (offset + np.arange(len(idx))) % k
        offset += len(idx)
    return folds


@dataclass(frozen=True)
class CVResult:
    """Out-of-fold vote fractions; every row was scored by a forest that never saw it."""

    cells: np.ndarray
    truth: np.ndarray
    folds: np.ndarray
    classes: tuple
    fractions: np.ndarray

    def predict(self, weights=None) -> np.ndarray:
        w = np.ones(len(self.classes)) if weights is None else np.asarray(weights, dtype=float)
        return np.asarray(self.classes, dtype=np.int64)[weighted_argmax(self.fractions * w)]


def cross_validate(fm: FeatureMatrix, labels, cfg: ForestConfig | None = None) -> CVResult:
    cfg = cfg or ForestConfig()
    codes = _labels_for(fm, labels)
    k = min(cfg.k_folds, len(codes))
    folds = stratified_folds(codes, k, cfg.master_seed)
    classes = tuple(sorted(set(codes.tolist())))
    fractions = np.zeros((len(codes), len(classes)))
    for f in range(k):
        test = folds == f
        if not test.any():
            continue
        forest = fit_forest(fm.X[~test], codes[~test], cfg, stream=f + 1, classes=classes)
        fractions[test] = forest.vote_fractions(fm.X[test])
        log.info("fold %d/%d done", f + 1, k)
    return CVResult(fm.cells, codes, folds, classes, fractions)


def recall_by_class(truth, pred, classes) -> dict:
    out = {}
    for c in classes:
        sel = truth == c
        if sel.any():
            out[c] = float(np.mean(pred[sel] == c))
    return out


def objective_value(truth, pred, classes, objective="nonres_macro_recall") -> float:
    if objective == "accuracy":
        return float(np.mean(truth == pred))
    rec = recall_by_class(truth, pred, classes)
    if objective == "nonres_macro_recall":
        rec.pop(int(LandUseClass.RESIDENTIAL), None)
    return float(np.mean(list(rec.values()))) if rec else 0.0


def candidate_weights(grid: dict, classes):
    """Weight vectors in lexicographic order of the per-class candidate lists."""
    lists = []
    for c in classes:
        cands = grid.get(LandUseClass(c), grid.get(int(c), (1.0,)))
        if not cands:
            raise ConfigError(f"empty weight candidate list for class {LandUseClass(c).name}")
        lists.append(tuple(float(w) for w in cands))
    return itertools.product(*lists)


@dataclass(frozen=True)
class WeightSearch:
    weights: np.ndarray
    score: float
    scores: list


def search_weights(cv: CVResult, grid: dict, objective="nonres_macro_recall") -> WeightSearch:
    """Score every candidate on the out-of-fold tallies; first maximum wins."""
    best, best_score, scores = None, -np.inf, []
    for cand in candidate_weights(grid, cv.classes):
        w = np.asarray(cand)
        if (w <= 0).any():
            raise ConfigError("weight candidates must be positive")
        s = objective_value(cv.truth, cv.predict(w), cv.classes, objective)
        scores.append((cand, s))
        if s > best_score:
            best, best_score = w, s
    if best is None:
        raise ConfigError("empty weight candidate grid")
    return WeightSearch(best, best_score, scores)


def tune_weights(fm: FeatureMatrix, labels, cfg: ForestConfig | None = None, cv: CVResult | None = None) -> np.ndarray:
    """Coarse grid search of per-class vote weights by cross-validated objective."""
    cfg = cfg or ForestConfig()
    if not cfg.weight_grid:
        raise ConfigError("empty weight candidate grid")
    cv = cv or cross_validate(fm, labels, cfg)
    return search_weights(cv, cfg.weight_grid, cfg.objective).weights
