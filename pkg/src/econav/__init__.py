"""Energy-aware robust obstacle avoidance for electric vehicles.

The library builds a receding-horizon controller from four pieces: the
vehicle, battery and road models (``dynamics``), sample-based occupancy
sets (``uncertainty``, ``obstacles``), dual reformulation of polytope
separation (``avoidance``) and the finite-horizon program (``ocp``).
``simulate`` closes the loop and ``cli`` exposes it on the command line.
"""
__version__ = "0.1.0"
