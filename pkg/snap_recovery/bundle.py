"""
Model bundle: the three phase trees of one t_span, with their fPCA models, in one JSON document.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from snap_recovery.exceptions import DataError, IncompatibleModel
from snap_recovery.profile import PhaseTag
from snap_recovery.tree import DecisionTree, TrainingConfig, fit_phase_tree


FORMAT_VERSION = 1


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ModelBundle:
    t_span: float
    trees: dict
    training_config: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        missing = [phase_tag.value for phase_tag in PhaseTag if phase_tag not in self.trees]
        if missing:
            raise IncompatibleModel(f"Bundle lacks trees for {missing}")
        for phase_tag, tree in self.trees.items():
            if tree.phase_tag is not phase_tag:
                raise IncompatibleModel(f"Tree stored as {phase_tag.value} classifies {tree.phase_tag.value}")

    def tree(self, phase_tag):
        return self.trees[PhaseTag(phase_tag)]

    def to_dict(self):
        return {
            'format_version': self.format_version,
            't_span': self.t_span,
            'training_config': self.training_config,
            'phases': {phase_tag.value: self.trees[phase_tag].to_dict() for phase_tag in PhaseTag},
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise IncompatibleModel("Model bundle must be a JSON object")
        version = d.get('format_version')
        if version != FORMAT_VERSION:
            raise IncompatibleModel(f"Unsupported bundle format_version {version}, expected {FORMAT_VERSION}")
        try:
            phases = d['phases']
            trees = {PhaseTag(tag): DecisionTree.from_dict(tree) for tag, tree in phases.items()}
            return cls(float(d['t_span']), trees, d.get('training_config', {}), version)
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise IncompatibleModel(f"Malformed model bundle: {e!r}") from e


def train_bundle(samples, t_span, config=None):
    """
    Fit the assembly tree on profiles truncated at t_span and both probe trees on full probe motions
    """
    config = config or TrainingConfig()
    samples = list(samples)
    labels = [sample.label for sample in samples]
    for phase_tag in PhaseTag:
        if any(phase_tag not in sample.profile_set for sample in samples):
            raise IncompatibleModel(f"Dataset lacks {phase_tag.value} profiles")
    trees = {}
    for phase_tag in PhaseTag:
        profiles = [sample.profile(phase_tag) for sample in samples]
        trees[phase_tag] = fit_phase_tree(profiles, labels, phase_tag, float(t_span), config)
    return ModelBundle(float(t_span), trees, config.to_dict())


def dumps(bundle):
    return json.dumps(bundle.to_dict(), indent=1, sort_keys=True) + '\n'


def save_bundle(path, bundle):
    path = Path(path)
    path.write_text(dumps(bundle), encoding='utf-8')
    logger.info(f"Saved model bundle to {path}")


def load_bundle(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: {e}") from e
    return ModelBundle.from_dict(d)
