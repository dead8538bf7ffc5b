# %% [markdown]
# # Planted offsets recover their predicted switch levels
#
# Scatter isolated test/reference pairs, predict each pair's switch level
# from block geometry alone, then run the full pipeline and compare.

# %%
import numpy as np

from crossscale import GridHeader, binarize, build_cube, build_pyramid
from crossscale.agreement import switch_surface
from crossscale.synth import expected_surface, generate_scene, random_scene

levels = 3
spec = random_scene(GridHeader(200, 200, 0.0, 0.0, 250.0), levels, n_pairs=40, n_unpaired_test=5, seed=7)
expected = expected_surface(spec, levels)

# %%
test, ref = (binarize(g) for g in generate_scene(spec))
family, switch = switch_surface(build_cube(build_pyramid(test, ref, levels)))
print("family matches:", np.array_equal(family, expected.family))
print("switch matches:", np.array_equal(switch, expected.switch))

# %%
ranked = expected.family != 0
codes, n = np.unique(switch[ranked], return_counts=True)
for code, count in zip(codes.tolist(), n.tolist()):
    print("never" if code == levels + 1 else f"level {code}", count)
