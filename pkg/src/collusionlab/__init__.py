"""Tabular Q-learning pricing agents in a repeated logit Bertrand duopoly.

Agents are trained jointly in one context and evaluated against partners
trained elsewhere, to see whether supra-competitive pricing survives the move.
"""

__version__ = "0.1.0"
