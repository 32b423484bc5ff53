"""Compositional RL from task specifications: spec language, abstract graphs,
a continuous rooms environment, ARS edge learning and the lazy-Dijkstra planner."""

from .spec_lang import (Achieve, Choice, Ensuring, Seq, Trajectory, eval_bool, eval_quant,
                        parse_spec, pretty, satisfies_spec)
from .graph import AbstractGraph, achieves_edge, compile_spec, satisfies_graph
from .rooms import RoomsEnv, RoomsLayout, load_layout, preset_layout
from .ars import ArsConfig, learn_edge_policy
from .planner import DirlConfig, PathPolicy, evaluate_policy, run_dirl

__version__ = "0.1.0"

__all__ = [
    "Achieve", "Choice", "Ensuring", "Seq", "Trajectory", "eval_bool", "eval_quant",
    "parse_spec", "pretty", "satisfies_spec", "AbstractGraph", "achieves_edge",
    "compile_spec", "satisfies_graph", "RoomsEnv", "RoomsLayout", "load_layout",
    "preset_layout", "ArsConfig", "learn_edge_policy", "DirlConfig", "PathPolicy",
    "evaluate_policy", "run_dirl",
]
