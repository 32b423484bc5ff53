# %% [markdown]
# # From a task spec to an abstract graph
#
# A spec is parsed into a small tree, then compiled into a DAG whose
# vertices are subgoal regions and whose edges carry safety constraints.

# %%
import numpy as np

from dirl import compile_spec, parse_spec, satisfies_graph, satisfies_spec
from dirl.graph import to_text
from dirl.harness import preset_spec_text
from dirl.rooms import preset_layout

layout = preset_layout("rooms9")
text = preset_spec_text("rooms9_ex")
print(text)

# %%
phi = parse_spec(text, layout.atoms())
G = compile_spec(phi)
print(to_text(G))

# %% [markdown]
# Satisfaction can be checked on the spec or on the graph; they agree.
# The door between (0,2) and (1,2) is closed, so a route through the top
# corner comes back through (1,1).

# %%
def centres(*rooms):
    return np.array([[c + 0.5, r + 0.5] for r, c in rooms])

good = centres((0, 0), (0, 1), (0, 2), (0, 1), (1, 1), (2, 1), (2, 2))
bad = centres((0, 0), (1, 0), (2, 0), (2, 1), (2, 2))   # crosses the obstacle room
for name, zeta in (("detour", good), ("through obstacle", bad)):
    print(f"{name:18s} spec={satisfies_spec(zeta, phi)} graph={satisfies_graph(zeta, G)}")

# %% [markdown]
# Graph sizes for the 16-rooms presets grow with the number of segments.

# %%
for i in range(1, 6):
    g = compile_spec(parse_spec(preset_spec_text(f"rooms16_phi{i}")))
    print(f"phi{i}: {g.n_vertices} vertices, {len(g.edges)} edges")
