"""
Online identification policy and recovery-action selection.

The assembly profile is classified first. When any node on the path decides
with a class probability below the threshold, the part is probed in +x and
then -x, both probe profiles are classified with their own trees, and the
probe whose path is the more trustworthy (larger smallest node accuracy)
wins. The assembly outcome is discarded once probing triggers.
"""

import logging
from dataclasses import dataclass
from typing import Optional

from snap_recovery import parsing
from snap_recovery.exceptions import Misconfigured, ProbeUnavailable
from snap_recovery.profile import PhaseTag, StateLabel
from snap_recovery.tree import ClassificationOutcome, classify_profile


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdentificationPolicyConfig:
    probability_threshold: float = 0.2
    t_span: float = 2.0
    probe_distance: float = 2.0
    recovery_step_x: float = 1.0
    recovery_step_theta: float = 1.0
    max_retries: int = 3

    def __post_init__(self):
        if not 0 < self.probability_threshold < 1:
            raise Misconfigured(f"probability_threshold must lie in (0, 1), got {self.probability_threshold}")
        for name in ('t_span', 'probe_distance', 'recovery_step_x', 'recovery_step_theta'):
            if not getattr(self, name) > 0:
                raise Misconfigured(f"{name} must be positive, got {getattr(self, name)}")
        if not (isinstance(self.max_retries, int) and self.max_retries >= 0):
            raise Misconfigured(f"max_retries must be a nonnegative integer, got {self.max_retries}")

    @classmethod
    def from_dict(cls, config):
        return parsing.parse_dataclass(cls, config)

    def to_dict(self):
        return parsing.dataclass_to_dict(self)


@dataclass(frozen=True)
class IdentificationResult:
    predicted: StateLabel
    used_probing: bool
    assembly_outcome: ClassificationOutcome
    probe_outcomes: Optional[tuple] = None
    chosen_source: PhaseTag = PhaseTag.ASSEMBLY

    def __post_init__(self):
        assert self.used_probing or (self.chosen_source is PhaseTag.ASSEMBLY and self.probe_outcomes is None), \
            f"Result without probing cannot come from {self.chosen_source}"

    def to_dict(self):
        return {
            'predicted': int(self.predicted),
            'used_probing': self.used_probing,
            'chosen_source': self.chosen_source.value,
            'assembly_outcome': self.assembly_outcome.to_dict(),
            'probe_outcomes': None if self.probe_outcomes is None else {
                'plus_x': self.probe_outcomes[0].to_dict(),
                'minus_x': self.probe_outcomes[1].to_dict(),
            },
        }


@dataclass(frozen=True)
class RecoveryAction:
    delta_x: float
    delta_theta: float
    retract_first: bool

    def to_dict(self):
        return {'delta_x': self.delta_x, 'delta_theta': self.delta_theta, 'retract_first': self.retract_first}


def fuse_probe_results(plus, minus):
    """ Pick the probe whose weakest node is stronger; ties go to +x """
    if minus.min_node_accuracy > plus.min_node_accuracy:
        return minus.predicted, PhaseTag.PROBE_MINUS_X
    return plus.predicted, PhaseTag.PROBE_PLUS_X


def identify(assembly_profile, trees, probe_supplier, config=None):
    """
    Identify the state of an assembly attempt, probing on low confidence

    Args:
        trees: mapping PhaseTag -> DecisionTree
        probe_supplier: callable taking PhaseTag.PROBE_PLUS_X or PROBE_MINUS_X
            and returning that probe's ForceTorqueProfile
    """
    config = config or IdentificationPolicyConfig()
    assembly_outcome = classify_profile(trees[PhaseTag.ASSEMBLY], assembly_profile)
    if assembly_outcome.min_class_probability >= config.probability_threshold:
        logger.debug(f"identify: assembly predicts {assembly_outcome.predicted} "
                     f"(min probability {assembly_outcome.min_class_probability:.3f})")
        return IdentificationResult(assembly_outcome.predicted, False, assembly_outcome)

    logger.info(f"identify: min class probability {assembly_outcome.min_class_probability:.3f} "
                f"below {config.probability_threshold}, probing")
    outcomes = []
    for phase_tag in (PhaseTag.PROBE_PLUS_X, PhaseTag.PROBE_MINUS_X):
        try:
            profile = probe_supplier(phase_tag)
        except Exception as e:
            raise ProbeUnavailable(f"No {phase_tag.value} profile available: {e}") from e
        if profile is None:
            raise ProbeUnavailable(f"No {phase_tag.value} profile available")
        outcomes.append(classify_profile(trees[phase_tag], profile))

    predicted, source = fuse_probe_results(*outcomes)
    logger.debug(f"identify: probes predict {outcomes[0].predicted} / {outcomes[1].predicted}, "
                 f"chose {source.value}")
    return IdentificationResult(predicted, True, assembly_outcome, tuple(outcomes), source)


# Sign of (dx, dtheta) carried by each error state
_ERROR_SIGNS = {
    StateLabel.X_POS: (1, 0),
    StateLabel.X_NEG: (-1, 0),
    StateLabel.THETA_POS: (0, 1),
    StateLabel.THETA_NEG: (0, -1),
    StateLabel.X_POS_THETA_POS: (1, 1),
    StateLabel.X_POS_THETA_NEG: (1, -1),
    StateLabel.X_NEG_THETA_POS: (-1, 1),
    StateLabel.X_NEG_THETA_NEG: (-1, -1),
}


def recovery_action(predicted, config=None):
    config = config or IdentificationPolicyConfig()
    predicted = StateLabel(predicted)
    if predicted is StateLabel.SUCCESS:
        return RecoveryAction(0.0, 0.0, retract_first=False)
    sign_x, sign_theta = _ERROR_SIGNS[predicted]
    return RecoveryAction(
        delta_x=-sign_x * config.recovery_step_x if sign_x else 0.0,
        delta_theta=-sign_theta * config.recovery_step_theta if sign_theta else 0.0,
        retract_first=True,
    )
