"""
Decision tree whose nodes split the remaining states in two with an SVM.

Construction follows a breadth-first expansion: at every impure node each
(channel, bipartition) candidate gets an SVM trained on that channel's fPCA
scores, the candidate is scored by the probability-weighted accuracy of its leave-one-out
predictions, and the best candidate's bipartition of the *true* labels becomes
the two children. Node ids follow the expansion order, so the children of
node i are always appended at the end of the node list.

Probability-weighted accuracy (the literal form):

    Accuracy = [ (sum P_TP + sum P_FP) / (TP + FN) + (sum P_FN + sum P_TN) / (FP + TN) ] / 2

where P_* is the probability of the side the SVM predicted. Each candidate
gets a single Platt sigmoid fitted on its leave-one-out decision values.

Node SVMs are retrained on all node samples and keep the winning candidate's
sigmoid.
"""

import dataclasses
import itertools
import logging
import os
from dataclasses import dataclass
from multiprocessing import Pool
from typing import NamedTuple, Optional

import numpy as np

from snap_recovery import parsing
from snap_recovery.exceptions import (
    DegenerateLabels,
    DegenerateNode,
    GridError,
    Misconfigured,
    UndefinedAccuracy,
    UnsplittableNode,
)
from snap_recovery.fpca import FpcaModel, extract_features, fit_profile_models
from snap_recovery.profile import (
    GRID_EPS,
    Channel,
    PhaseTag,
    StateLabel,
    resample_to_grid,
    truncate,
)
from snap_recovery.svm import (
    KernelSpec,
    SvmModel,
    class_probability,
    decision_value,
    fit_platt,
    platt_probability,
    resolve_gamma,
    signed_kernel,
    smo,
    standardization,
    train_svm,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    n_components: int = 2
    regularization_c: float = 10.0
    kernel: str = 'rbf'
    gamma: object = 'scale'
    eq1_corrected: bool = False
    smo_tol: float = 1e-3
    max_iter: int = 100_000
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.n_components, int) and self.n_components >= 1):
            raise Misconfigured(f"n_components must be a positive integer, got {self.n_components}")
        if not self.regularization_c > 0:
            raise Misconfigured(f"regularization_c must be positive, got {self.regularization_c}")
        if not self.smo_tol > 0:
            raise Misconfigured(f"smo_tol must be positive, got {self.smo_tol}")
        if self.n_jobs is not None and not (isinstance(self.n_jobs, int) and self.n_jobs >= 1):
            raise Misconfigured(f"n_jobs must be a positive integer, got {self.n_jobs}")
        if isinstance(self.gamma, (int, float)) and not self.gamma > 0:
            raise Misconfigured(f"gamma must be positive, got {self.gamma}")
        KernelSpec(self.kernel, 1.0)  # validates the kernel kind

    @property
    def workers(self):
        """ Candidate-scoring processes; n_jobs unset means one per CPU """
        return self.n_jobs or os.cpu_count() or 1

    @classmethod
    def from_dict(cls, config):
        return parsing.parse_dataclass(cls, config)

    def to_dict(self):
        return parsing.dataclass_to_dict(self)


@dataclass(frozen=True, eq=False)
class TreeNode:
    node_id: int
    pattern_ids: tuple
    channel: Optional[Channel] = None
    partition: Optional[tuple] = None
    svm: Optional[SvmModel] = None
    accuracy: Optional[float] = None
    children: Optional[tuple] = None

    @property
    def is_leaf(self):
        return self.children is None

    def to_dict(self):
        return {
            'node_id': self.node_id,
            'pattern_ids': [int(label) for label in self.pattern_ids],
            'channel': None if self.channel is None else int(self.channel),
            'partition': None if self.partition is None else [int(label) for label in self.partition],
            'svm': None if self.svm is None else self.svm.to_dict(),
            'accuracy': self.accuracy,
            'children': None if self.children is None else list(self.children),
        }

    @classmethod
    def from_dict(cls, d):
        leaf = d['children'] is None
        return cls(
            node_id=int(d['node_id']),
            pattern_ids=tuple(StateLabel(v) for v in d['pattern_ids']),
            channel=None if leaf else Channel(d['channel']),
            partition=None if leaf else tuple(StateLabel(v) for v in d['partition']),
            svm=None if leaf else SvmModel.from_dict(d['svm']),
            accuracy=d['accuracy'],
            children=None if leaf else tuple(d['children']),
        )


@dataclass(frozen=True, eq=False)
class DecisionTree:
    nodes: list
    phase_tag: PhaseTag = PhaseTag.ASSEMBLY
    t_span: Optional[float] = None
    fpca_models: Optional[list] = None

    @property
    def root(self):
        return self.nodes[0]

    @property
    def internal_nodes(self):
        return [node for node in self.nodes if not node.is_leaf]

    @property
    def leaves(self):
        return [node for node in self.nodes if node.is_leaf]

    def to_dict(self):
        return {
            'phase_tag': self.phase_tag.value,
            't_span': self.t_span,
            'fpca_models': None if self.fpca_models is None else [m.to_dict() for m in self.fpca_models],
            'nodes': [node.to_dict() for node in self.nodes],
        }

    @classmethod
    def from_dict(cls, d):
        models = d.get('fpca_models')
        return cls(
            nodes=[TreeNode.from_dict(node) for node in d['nodes']],
            phase_tag=PhaseTag(d['phase_tag']),
            t_span=d['t_span'],
            fpca_models=None if models is None else [FpcaModel.from_dict(m) for m in models],
        )


class PathStep(NamedTuple):
    node_id: int
    positive: bool
    probability: float


@dataclass(frozen=True)
class ClassificationOutcome:
    predicted: StateLabel
    node_path: tuple
    min_class_probability: float
    min_node_accuracy: float

    def to_dict(self):
        return {
            'predicted': int(self.predicted),
            'node_path': [
                {'node_id': step.node_id, 'side': 'positive' if step.positive else 'negative',
                 'class_probability': step.probability}
                for step in self.node_path
            ],
            'min_class_probability': self.min_class_probability,
            'min_node_accuracy': self.min_node_accuracy,
        }


# ------------------------------- Node accuracy --------------------------------


def node_accuracy(per_sample, corrected=False):
    """
    Probability-weighted accuracy of a split from per-sample (true_in_c, predicted_in_c, prob_of_predicted_side)

    With corrected=True the numerators are grouped by true class, each sample
    contributing the probability it assigns to its true side.
    """
    per_sample = list(per_sample)
    n_pos = sum(1 for true_in_c, _, _ in per_sample if true_in_c)
    n_neg = len(per_sample) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAccuracy(f"Node accuracy needs both true classes, got {n_pos} in C and {n_neg} outside")

    sums = {'TP': 0.0, 'FP': 0.0, 'TN': 0.0, 'FN': 0.0}
    for true_in_c, predicted_in_c, probability in per_sample:
        if true_in_c:
            category = 'TP' if predicted_in_c else 'FN'
        else:
            category = 'FP' if predicted_in_c else 'TN'
        if corrected and category in ('FP', 'FN'):
            probability = 1.0 - probability
        sums[category] += probability

    if corrected:
        return ((sums['TP'] + sums['FN']) / n_pos + (sums['FP'] + sums['TN']) / n_neg) / 2
    return ((sums['TP'] + sums['FP']) / n_pos + (sums['FN'] + sums['TN']) / n_neg) / 2


def enumerate_bipartitions(pattern_ids):
    """
    Every proper nonempty subset, one per complement pair, by size then label order
    """
    labels = sorted(StateLabel(label) for label in set(pattern_ids))
    if len(labels) < 2:
        raise DegenerateNode(f"A split needs at least 2 states, got {labels}")
    seen = set()
    candidates = []
    for size in range(1, len(labels)):
        for subset in itertools.combinations(labels, size):
            complement = frozenset(labels) - frozenset(subset)
            if complement in seen:
                continue
            seen.add(frozenset(subset))
            candidates.append(subset)
    return candidates


# ------------------------------ Split evaluation ------------------------------


def _drop_multiplier(alpha, y, i):
    """
    Remove sample i from a dual solution, restoring sum(alpha * y) = 0

    The opposite class's multipliers shrink proportionally, which keeps every
    multiplier inside its box.
    """
    alpha = alpha.copy()
    removed = alpha[i]
    alpha[i] = 0.0
    if removed > 0:
        opposite = y != y[i]
        total = alpha[opposite].sum()
        alpha[opposite] *= (total - removed) / total
    return alpha


def loocv_decision_values(kernel_matrix, targets, c, tol, max_iter):
    """
    Decision value of every sample under the SVM trained without it

    Folds whose held-out sample is not a support vector reuse the full
    solution. Others warm-start SMO from it with the held-out sample masked
    out, sharing one signed kernel matrix across folds.
    """
    n = targets.shape[0]
    Q = signed_kernel(kernel_matrix, targets)
    alpha_full, bias_full, _ = smo(kernel_matrix, targets, c, tol, max_iter, Q=Q)
    held_out_values = kernel_matrix @ (alpha_full * targets) + bias_full

    for i in np.flatnonzero(alpha_full > 0):
        active = np.arange(n) != i
        start = _drop_multiplier(alpha_full, targets, i)
        alpha, bias, _ = smo(kernel_matrix, targets, c, tol, max_iter, alpha=start, active=active, Q=Q)
        held_out_values[i] = kernel_matrix[i] @ (alpha * targets) + bias
    return held_out_values


def loocv_predictions(kernel_matrix, targets, c, tol, max_iter):
    """
    Leave-one-out decision values with P(+1) from one Platt sigmoid fitted on them

    Return:
        (held_out_values, probabilities, (platt_a, platt_b))
    """
    held_out_values = loocv_decision_values(kernel_matrix, targets, c, tol, max_iter)
    platt = fit_platt(held_out_values, targets)
    return held_out_values, platt_probability(*platt, held_out_values), platt


def split_accuracy(in_c, held_out_values, probabilities, corrected=False):
    """ Node accuracy of leave-one-out predictions, routing by decision-value sign """
    per_sample = []
    for true_in_c, value, probability in zip(in_c, held_out_values, probabilities):
        positive = bool(value > 0)
        per_sample.append((bool(true_in_c), positive, probability if positive else 1.0 - probability))
    return node_accuracy(per_sample, corrected=corrected)


# Per-node data shared with candidate workers; set by _init_worker
_NODE = {}


def _init_worker(kernel_matrices, labels, config):
    _NODE['kernel_matrices'] = kernel_matrices
    _NODE['labels'] = labels
    _NODE['config'] = config


def _evaluate_candidate(candidate):
    channel, partition = candidate
    config = _NODE['config']
    labels = _NODE['labels']
    in_c = np.isin(labels, [int(label) for label in partition])
    targets = np.where(in_c, 1.0, -1.0)
    held_out_values, probabilities, platt = loocv_predictions(
        _NODE['kernel_matrices'][channel.index], targets,
        config.regularization_c, config.smo_tol, config.max_iter,
    )
    accuracy = split_accuracy(in_c, held_out_values, probabilities, corrected=config.eq1_corrected)
    return accuracy, platt


def _canonical_order(scores, labels):
    flat = scores.reshape(scores.shape[0], -1)
    keys = [flat[:, k] for k in reversed(range(flat.shape[1]))] + [labels]
    return np.lexsort(keys)


def _check_splittable(scores, labels, sample_ids):
    seen = {}
    for row, label, sample_id in zip(scores.reshape(scores.shape[0], -1), labels, sample_ids):
        seen.setdefault(row.tobytes(), []).append((sample_id, label))
    for group in seen.values():
        if len({label for _, label in group}) > 1:
            described = ', '.join(f"#{sample_id} ({StateLabel(label)})" for sample_id, label in group)
            raise UnsplittableNode(f"Samples with identical features but different labels: {described}")


def _node_kernels(scores, config):
    """
    Standardized per-channel points, their gamma and kernel matrix

    Standardization statistics and gamma come from all node samples, held-out
    ones included, so every fold of every candidate shares one kernel matrix.
    """
    prepared = []
    for channel in Channel:
        points = scores[:, channel.index, :]
        mean, scale = standardization(points)
        standardized = (points - mean) / scale
        gamma = resolve_gamma(standardized, config.gamma) if config.kernel == 'rbf' else None
        kernel = KernelSpec(config.kernel, gamma)
        prepared.append((kernel, kernel.matrix(standardized, standardized)))
    return prepared


def find_best_split(scores, labels, pattern_ids, config):
    """
    Score every (channel, bipartition) candidate of a node

    Return:
        (channel, partition, accuracy, kernel, platt) of the best candidate,
        platt being the sigmoid fitted on its leave-one-out decision values;
        ties go to the smaller channel, then the earlier bipartition.
    """
    prepared = _node_kernels(scores, config)
    kernel_matrices = [matrix for _, matrix in prepared]
    candidates = [(channel, partition)
                  for channel in Channel
                  for partition in enumerate_bipartitions(pattern_ids)]

    n_jobs = min(config.workers, len(candidates))
    if n_jobs > 1:
        with Pool(n_jobs, initializer=_init_worker, initargs=(kernel_matrices, labels, config)) as pool:
            results = pool.map(_evaluate_candidate, candidates)
    else:
        _init_worker(kernel_matrices, labels, config)
        results = list(map(_evaluate_candidate, candidates))

    best = None
    for (channel, partition), (accuracy, platt) in zip(candidates, results):
        logger.debug(f"Candidate {channel.name} {[str(s) for s in partition]}: {accuracy:.4f}")
        if best is None or accuracy > best[2]:
            best = (channel, partition, accuracy, platt)
    channel, partition, accuracy, platt = best
    return channel, partition, accuracy, prepared[channel.index][0], platt


# -------------------------------- Construction --------------------------------


def build_tree(features, labels, config=None, fpca_models=None, phase_tag=PhaseTag.ASSEMBLY, t_span=None):
    config = config or TrainingConfig()
    labels = np.array([int(StateLabel(label)) for label in labels])
    scores = np.stack([feature.channel_scores for feature in features])
    if scores.shape[0] != labels.shape[0]:
        raise DegenerateLabels(f"Got {scores.shape[0]} feature vectors for {labels.shape[0]} labels")
    states, counts = np.unique(labels, return_counts=True)
    if states.size < 2:
        raise DegenerateLabels(f"Need at least 2 distinct states, got {[str(StateLabel(s)) for s in states]}")
    if np.any(counts < 2):
        sparse = [str(StateLabel(s)) for s, n in zip(states, counts) if n < 2]
        raise DegenerateLabels(f"Need at least 2 samples per state, got fewer for {sparse}")

    order = _canonical_order(scores, labels)
    scores, labels, sample_ids = scores[order], labels[order], order

    nodes = [TreeNode(0, tuple(StateLabel(s) for s in states))]
    node_id = 0
    while node_id < len(nodes):
        node = nodes[node_id]
        if len(node.pattern_ids) == 1:
            node_id += 1
            continue

        members = np.isin(labels, [int(s) for s in node.pattern_ids])
        node_scores, node_labels = scores[members], labels[members]
        _check_splittable(node_scores, node_labels, sample_ids[members])

        channel, partition, accuracy, kernel, (platt_a, platt_b) = find_best_split(
            node_scores, node_labels, node.pattern_ids, config)
        if accuracy <= 0.5:
            logger.warning(f"Node {node_id}: best split {channel.name} {[str(s) for s in partition]} "
                           f"only reaches accuracy {accuracy:.3f}; using it anyway")
        else:
            logger.info(f"Node {node_id}: split {channel.name} {[str(s) for s in partition]} "
                        f"accuracy {accuracy:.3f}")

        targets = np.where(np.isin(node_labels, [int(s) for s in partition]), 1.0, -1.0)
        svm = train_svm(node_scores[:, channel.index, :], targets, config.regularization_c, kernel,
                        tol=config.smo_tol, max_iter=config.max_iter, standardize=True, calibrate=False)
        svm = dataclasses.replace(svm, platt_a=platt_a, platt_b=platt_b)

        positive_id, negative_id = len(nodes), len(nodes) + 1
        rest = tuple(s for s in node.pattern_ids if s not in partition)
        nodes[node_id] = TreeNode(node_id, node.pattern_ids, channel, tuple(partition), svm,
                                  float(accuracy), (positive_id, negative_id))
        nodes.append(TreeNode(positive_id, tuple(partition)))
        nodes.append(TreeNode(negative_id, rest))
        node_id += 1

    return DecisionTree(nodes, PhaseTag(phase_tag), t_span, fpca_models)


# ------------------------------- Classification -------------------------------


def classify(tree, feature):
    node = tree.root
    path = []
    accuracies = []
    while not node.is_leaf:
        x = feature.channel(node.channel)
        value = decision_value(node.svm, x)
        probability = class_probability(node.svm, x)
        positive = bool(value > 0)
        path.append(PathStep(node.node_id, positive, float(probability if positive else 1.0 - probability)))
        accuracies.append(node.accuracy)
        node = tree.nodes[node.children[0] if positive else node.children[1]]

    return ClassificationOutcome(
        predicted=node.pattern_ids[0],
        node_path=tuple(path),
        min_class_probability=min((step.probability for step in path), default=1.0),
        min_node_accuracy=min(accuracies, default=1.0),
    )


def _to_tree_grid(tree, profile):
    if tree.phase_tag is PhaseTag.ASSEMBLY and tree.t_span is not None \
            and profile.duration > tree.t_span + GRID_EPS:
        profile = truncate(profile, tree.t_span)
    grid_T = tree.fpca_models[0].grid_T
    if profile.length != grid_T:
        expected = (grid_T - 1) * tree.fpca_models[0].sample_period
        if abs(profile.duration - expected) > GRID_EPS:
            raise GridError(f"Profile spans {profile.duration}s, tree expects {expected}s")
        profile = resample_to_grid(profile, grid_T)
    return profile


def classify_profile(tree, profile):
    return classify(tree, extract_features(tree.fpca_models, _to_tree_grid(tree, profile)))


def prepare_profiles(profiles, phase_tag, t_span=None):
    """
    Truncate assembly profiles to t_span and bring all profiles onto the first one's grid
    """
    profiles = list(profiles)
    if PhaseTag(phase_tag) is PhaseTag.ASSEMBLY and t_span is not None:
        profiles = [truncate(profile, t_span) for profile in profiles]
    reference = profiles[0]
    prepared = []
    for profile in profiles:
        if profile.length != reference.length:
            if abs(profile.duration - reference.duration) > GRID_EPS:
                raise GridError(f"Profiles span {profile.duration}s and {reference.duration}s")
            profile = resample_to_grid(profile, reference.length)
        prepared.append(profile)
    return prepared


def fit_phase_tree(profiles, labels, phase_tag, t_span=None, config=None):
    config = config or TrainingConfig()
    profiles = prepare_profiles(profiles, phase_tag, t_span)
    models = fit_profile_models(profiles, config.n_components)
    features = [extract_features(models, profile) for profile in profiles]
    logger.info(f"Building {PhaseTag(phase_tag).value} tree from {len(profiles)} profiles")
    return build_tree(features, labels, config, fpca_models=models, phase_tag=phase_tag, t_span=t_span)
