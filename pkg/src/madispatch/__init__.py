"""Multi-agent request dispatching for multi-controller SDN control planes.

Modules
    topology    network model, workloads, observations and global state
    sim         step-driven discrete-event control-plane simulator
    kernels     hot loops (compiled extension with a pure-Python fallback)
    nn          small MLPs, gradients and Adam
    policy      shared-priority softmax policy with Gaussian exploration
    dispatcher  candidate filtering and priority-to-probability mapping
    trainer     MAPPO, SA-PPO-MA and Central training
    baselines   CWRR, random and model-based gradient-descent dispatchers
    experiment  experiment specs, checkpoints and CSV output
"""
from .kernels import BACKEND
from .topology import Topology, WorkloadSpec, load_topology

__version__ = "0.1.0"
__all__ = ["BACKEND", "Topology", "WorkloadSpec", "load_topology", "__version__"]
