# Zoning polygons onto a regular grid.
#
# Each cell takes the class covering the largest part of its area. Cells
# nothing covers stay unlabeled (code 0).

import numpy as np

from landuse_cdr.grid import GridSpec, ZoningPolygon, coverage_fractions, rasterize_zoning


def ring(*pts):
    # rings are closed, GeoJSON style
    return [*pts, pts[0]]


spec = GridSpec(origin_x=0.0, origin_y=0.0, n_rows=6, n_cols=8, cell_size=100.0)

# a residential block with a park cut out of it, a commercial strip and an industrial triangle
hole = ring((150, 150), (320, 150), (320, 300), (150, 300))
res = ZoningPolygon.from_coords(ring((0, 0), (500, 0), (500, 450), (0, 450)), "residential", holes=[hole])
park = ZoningPolygon.from_coords(hole, "parks")
com = ZoningPolygon.from_coords(ring((500, 0), (560, 0), (560, 600), (500, 600)), "commercial")
ind = ZoningPolygon.from_coords(ring((560, 0), (800, 0), (800, 400)), "industrial")
polys = [res, park, com, ind]

zg = rasterize_zoning(polys, spec)
print("labels, row 0 at the bottom (0 = unlabeled):")
print(zg.labels[::-1])

# coverage fractions per class, shape (5, rows, cols)
frac = coverage_fractions(polys, spec)
print("\ncell (2, 5) coverage by class:", np.round(frac[:, 2, 5], 3).tolist())
# exact clipping: summed fractions equal total area in cell units (500*450 + 60*600 + 240*400/2)
print("covered area in cells:", round(float(frac.sum()), 6), "expected", (225000 + 36000 + 48000) / 1e4)

# a coverage floor leaves barely touched cells unlabeled
strict = rasterize_zoning(polys, spec, min_coverage=0.5)
print("\nlabeled cells: %d, with min_coverage=0.5: %d" % (zg.labeled.sum(), strict.labeled.sum()))
