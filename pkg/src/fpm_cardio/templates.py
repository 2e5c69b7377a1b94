PARTITION_HEADER = "# fpm-cardio partition v1 (lengths in cm)"

PARTITION_TEMPLATE = """{header}
dim {dim}
points {n}
{points}
cells {n}
{cells}
facets {m}
{facets}
"""

# One cell: owner, number of vertices, number of faces (0 in 2D), then the
# vertex coordinates and, in 3D, one "face" line of vertex indices per face.
CELL_LINE = "cell {owner} {nverts} {nfaces}"
FACE_LINE = "face {count} {indices}"

# Facets: "internal" lists both cells, "external" only the owning cell.
INTERNAL_FACET_LINE = "facet internal {e1} {e2} {nverts}"
EXTERNAL_FACET_LINE = "facet external {e1} {nverts}"

VTK_TEMPLATE = """# vtk DataFile Version 3.0
fpm-cardio snapshot t = {t!r} ms
ASCII
DATASET UNSTRUCTURED_GRID
POINTS {n} double
{points}
CELLS {n} {size}
{cells}
CELL_TYPES {n}
{types}
POINT_DATA {n}
SCALARS V double 1
LOOKUP_TABLE default
{values}
"""

VTK_VERTEX = 1

SNAPSHOT_NAME = "snapshot_{index:06d}.{extension}"
TRACE_NAME = "probe_{name}.csv"
CHECKPOINT_NAME = "checkpoint_{index:06d}.txt"

TRACE_HEADER = "t_ms,V_mV"
PROBE_INDEX_HEADER = "probe,node,{coordinates}"
LAT_HEADER = "node,{coordinates},lat_ms"
SNAPSHOT_HEADER = "{coordinates},V"
METRICS_HEADER = ["probe", "node", "lat_ms", "apd90_ms"]
CV_HEADER = ["probe_a", "probe_b", "distance_cm", "cv_cm_per_ms"]

CHECKPOINT_TEMPLATE = """# fpm-cardio checkpoint v1
t {t!r}
nodes {n}
states {names}
"""

COO_HEADER = "# fpm-cardio sparse matrix {rows} x {cols}, {nnz} entries: row col value"

NUMBER_FORMAT = "%.17g"
