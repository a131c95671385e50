from .pomdp import TabularPOMDP, POMDPDocument
from .policy import HistoryPolicy
from .oom import ObservableOperatorModel, EmissionActionMatrix
from .learner import (
    CandidateSet,
    LikelihoodLedger,
    ConfidenceSet,
    EpisodeRecord,
    RegretTrace,
    ValidityRecord
)
from .function_class import FiniteFunctionClass, EluderResult, PigeonholeCheck
from .experiment import (
    LockSpec,
    GeneratorSpec,
    BetaSpec,
    ExperimentConfig,
    SeedSummary,
    RunSummary
)

__all__ = [
    'TabularPOMDP',
    'POMDPDocument',
    'HistoryPolicy',
    'ObservableOperatorModel',
    'EmissionActionMatrix',
    'CandidateSet',
    'LikelihoodLedger',
    'ConfidenceSet',
    'EpisodeRecord',
    'RegretTrace',
    'ValidityRecord',
    'FiniteFunctionClass',
    'EluderResult',
    'PigeonholeCheck',
    'LockSpec',
    'GeneratorSpec',
    'BetaSpec',
    'ExperimentConfig',
    'SeedSummary',
    'RunSummary'
]
