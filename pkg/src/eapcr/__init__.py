"""EAPCR: regression on multi-source heterogeneous tabular data.

Core pieces: a small float64 autodiff engine (:mod:`eapcr.autodiff`), the
feature encoding pipeline (:mod:`eapcr.pipeline`), the EAPCR network itself
(:mod:`eapcr.model`), mini-batch training (:mod:`eapcr.training`), metrics and
baselines (:mod:`eapcr.evaluation`), and the experiment harness with CSV
ingestion, checkpoints, sweep orchestration, CLI and HTTP service
(:mod:`eapcr.data`, :mod:`eapcr.checkpoint`, :mod:`eapcr.experiments`,
:mod:`eapcr.cli`, :mod:`eapcr.service`).
"""

__version__ = "0.1.0"
