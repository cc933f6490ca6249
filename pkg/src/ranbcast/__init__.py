"""Deterministic simulator of an NG-RAN broadcast/multicast architecture.

Modules follow the network from the bottom up: ``topology`` (nodes and
links), ``rbma`` (broadcast areas and admission), ``ran_sync`` (TTA
stamped delivery), ``bearer_switching`` (DTCH/XTCH choice),
``rrc_mobility`` (UE states), ``sfn_scheduler`` (frames and alignment)
and ``harness`` (event loop, scenarios, CLI).
"""

__version__ = "0.1.0"
