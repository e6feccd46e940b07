"""Routed Bell experiments: bounds on short-range quantum correlations.

Modules
-------
bell
    Scenarios, correlation tables, detection-efficiency maps, Bell expressions.
qubits
    Explicit qubit strategies, parent POVMs and visibility models.
ncalg
    Operator words, relation sets and moment-matrix structures.
sdp
    Primal-dual interior-point SDP solver with certificate checks.
bounds
    Relaxation upper bounds, tradeoff curves and critical efficiencies.
seesaw
    Alternating-optimization lower bounds and explicit short-range models.
certificates
    Sum-of-squares checks, analytic tables and closed-form verifications.
"""

__version__ = "0.1.0"
