# %% [markdown]
# # Cross-scale comparison of two small maps
#
# A test map and a reference map that disagree only by a one-cell shift.
# At native resolution every occupied pixel is an error; after one or two
# OR-aggregations the blocks agree, which is what the switch level records.

# %%
import numpy as np

from crossscale import CountGrid, GridHeader, build_cube, build_pyramid, binarize, composite_surface
from crossscale.metrics import build_report

lattice = GridHeader(ncols=8, nrows=8, xll=0.0, yll=0.0, cellsize=250.0)
test = np.zeros((8, 8))
ref = np.zeros((8, 8))
test[2, 2] = test[5, 5] = 1
ref[2, 3] = ref[5, 6] = 1  # (2,2)-(2,3) share a 2x2 block, (5,5)-(5,6) straddle one

# %%
pyramid = build_pyramid(binarize(CountGrid(lattice, test)), binarize(CountGrid(lattice, ref)), 3)
for level in pyramid.levels:
    print(f"level {level.index}, {level.factor}x{level.factor} blocks")
    print(level.coarse.cells)

# %% [markdown]
# Switch codes: 0 = agreeing pixel, 1..3 = level where the block first
# agrees, 4 = never agrees within the pyramid.

# %%
surface = composite_surface(build_cube(pyramid))
print(surface.switch)
print(np.round(surface.probability.values, 2))

# %%
report = build_report(pyramid, build_cube(pyramid))
print(report.to_csv())
print(report.histogram)
