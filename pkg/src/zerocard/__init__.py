"""Semantics-driven cardinality estimation toolkit.

Modules
-------
tables        typed CSV ingestion and per-column statistics
semantics     column-text serialization and embedding providers
distribution  bucketed distributions, predicate vectors, exact oracle
model         the estimator network and its binary parameter format
training      workload generation, composite objective, Adam loop
baselines     histogram heuristics (AVI/EBO/MinSel) and sampling
evaluation    q-error metrics, failure accounting, reports
estimators    adapters binding each method to the evaluation harness
synth         synthetic corpus generator for desk-scale experiments
cli           end-to-end pipeline commands and the TCP serve mode
"""

__version__ = "0.1.0"
