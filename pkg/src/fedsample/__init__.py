"""Wall-clock-optimal client sampling for federated learning.

Submodules:
    system: client fleet description and validation.
    timing: per-round time under same-finish-time bandwidth allocation.
    convergence: round-count bound and its pilot-fitted constants.
    optimizer: sampling probabilities minimizing predicted training time.
    simulator: FedAvg with independent client sampling.
    experiment: pilots, optimization and baseline comparison end to end.
"""

__version__ = "0.1.0"
