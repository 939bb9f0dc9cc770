# End-to-end comparison at reduced scale: train the learned router, tune its
# fusion on validation, and evaluate against the deterministic control on
# matched test episodes.

from modroute.config import EvalProtocol, ExperimentConfig
from modroute.experiments import prepare_corpus, run_comparison
from modroute.reports import comparison_tables

# default corpus and PPO settings, trimmed to one seed and a smaller test
# sample so the demo finishes in about two minutes
config = ExperimentConfig()
config.eval = EvalProtocol(episodes_per_family=80, val_episodes_per_family=20,
                           full_catalog_episodes=30)
config.seeds = (1,)
config.validate()

bundle = prepare_corpus(config)
result = run_comparison(bundle, config)
print(comparison_tables(result))
