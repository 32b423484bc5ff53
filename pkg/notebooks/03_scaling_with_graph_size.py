# %% [markdown]
# # Steps needed as the graph grows
#
# For the open-door 16-rooms specs phi1..phi3 (2, 4 and 8 edges), find the
# smallest budget on a fixed grid that reaches success >= 0.5 and compare
# the total steps it took. A run at a single large budget is shown too,
# where every edge gets the same k.

# %%
import numpy as np

from dirl import DirlConfig, compile_spec, evaluate_policy, run_dirl
from dirl.planner import PlannerFailure
from dirl.ars import ArsConfig
from dirl.harness import resolve_spec
from dirl.rooms import RoomsEnv, preset_layout

layout = preset_layout("rooms16_open")
env = RoomsEnv(layout)
grid = (60, 120, 300, 600, 1200, 3000)

for name in ("rooms16_phi1", "rooms16_phi2", "rooms16_phi3"):
    G = compile_spec(resolve_spec(name, layout)[1])
    for k in grid:
        try:
            res = run_dirl(G, env, DirlConfig(ArsConfig(episodes=k), seed=0))
        except PlannerFailure:
            continue
        p, _ = evaluate_policy(res.policy, G, env, 500, np.random.default_rng(0))
        if p >= 0.5:
            steps = res.state.counter.steps
            print(f"{name}: |G|={len(G.edges)} k={k} steps={steps} per edge={steps / len(G.edges):.0f}")
            break

# %% [markdown]
# At a common budget the per-edge cost is close to constant, so total steps
# grow about linearly with the number of edges.

# %%
for name in ("rooms16_phi1", "rooms16_phi2", "rooms16_phi3"):
    G = compile_spec(resolve_spec(name, layout)[1])
    res = run_dirl(G, env, DirlConfig(ArsConfig(episodes=1500), seed=0))
    steps = res.state.counter.steps
    print(f"{name}: |G|={len(G.edges)} steps={steps} per edge={steps / len(G.edges):.0f}")
