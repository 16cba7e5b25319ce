"""Timing-aware adversarial attacks on reinforcement-learning policies.

Subpackages are imported lazily by callers; the modules are:

* :mod:`stealthrl.env` - LineWorld, Catch and LaneKeep environments
* :mod:`stealthrl.nn` - numpy MLP with manual backprop and Adam
* :mod:`stealthrl.agent` - victim policies, behaviour cloning, REINFORCE
* :mod:`stealthrl.perturb` - bounded observation perturbations (C&W style, FGSM)
* :mod:`stealthrl.predictor` - transition models and rollouts
* :mod:`stealthrl.cp_attack` - critical-point attack
* :mod:`stealthrl.antagonist` - learned attack-timing policy
* :mod:`stealthrl.harness` - baselines, sweeps and reports
"""

__version__ = "0.1.0"
