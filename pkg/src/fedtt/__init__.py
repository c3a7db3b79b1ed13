"""Cross-city traffic knowledge transfer under federation.

Submodules: ``graph`` and ``data`` (networks, series, synthesis), ``tvi``
(imputation), ``tda`` (domain adaptation), ``tst`` and ``wire`` (secret
transmission), ``fpt`` (the federated runtime), ``predictor`` and ``cli``.
"""

from .data import SynthesisConfig, TrafficSeries, split_series, synthesize_multi_city
from .fpt import (ClientData, FederationConfig, FreezeCache, RunReport, TargetData, no_transfer_baseline,
                  run_federation, sequential_reference)
from .graph import RoadNetwork, shortest_distance_matrix
from .predictor import evaluate, fit, make_predictor
from .tda import fit_transforms, train_adapter
from .tst import CipherBox, simulate_protocol
from .tvi import fit_tvi, impute_with

__version__ = "0.1.0"
