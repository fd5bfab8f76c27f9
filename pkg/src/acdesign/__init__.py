"""Adversarial experiment-design engine for two-state HMM sequence-prediction tasks.

Subpackages cover the environment family (env_hmm), the Bayesian reference
policy (ideal_learner), the recurrent behavioral model (gru_policy), regret
maximization over the task space (regret_search), synthetic participant
populations (synthetic_agents), the construction loop itself (ac_loop), the
evaluation battery (analysis), and a trial-serving HTTP service
(session_service).
"""

__version__ = "0.1.0"
