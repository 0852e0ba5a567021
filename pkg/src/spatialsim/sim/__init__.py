from .core import ArrayConfig, ArraySim, BoundSend, PassResult, SimFault

__all__ = ["ArrayConfig", "ArraySim", "BoundSend", "PassResult", "SimFault"]
