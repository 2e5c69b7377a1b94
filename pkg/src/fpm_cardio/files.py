import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import OutputError, PartitionFormatError
from .geometry import Cell, CellPartition, Facet, FacetKind, PointCloud
from .templates import (
    CELL_LINE,
    CHECKPOINT_TEMPLATE,
    COO_HEADER,
    EXTERNAL_FACET_LINE,
    FACE_LINE,
    INTERNAL_FACET_LINE,
    LAT_HEADER,
    NUMBER_FORMAT,
    PARTITION_HEADER,
    PARTITION_TEMPLATE,
    PROBE_INDEX_HEADER,
    SNAPSHOT_HEADER,
    SNAPSHOT_NAME,
    TRACE_HEADER,
    VTK_TEMPLATE,
    VTK_VERTEX,
)

logger = logging.getLogger("fpm_cardio")

LAT_FILE_NAME = "lat.csv"
PROBE_INDEX_NAME = "probes.csv"
COORDINATE_NAMES = ("x", "y", "z")

PathLike = Union[str, Path]
Positions = Union[CellPartition, PointCloud, np.ndarray]


def _number(value: float) -> str:
    return NUMBER_FORMAT % value


def _row(values: Sequence[float]) -> str:
    return " ".join(_number(v) for v in values)


def _positions(source: Positions) -> np.ndarray:
    if isinstance(source, CellPartition):
        return source.points.positions
    if isinstance(source, PointCloud):
        return source.positions
    return np.asarray(source, dtype=float)


def _coordinates(dim: int) -> str:
    return ",".join(COORDINATE_NAMES[:dim])


def _write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def _write_columns(path: PathLike, header: str, columns: np.ndarray, fmt) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, columns, delimiter=",", header=header, comments="", fmt=fmt)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def _read_columns(path: PathLike, expected_header: Optional[str] = None) -> Tuple[str, np.ndarray]:
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip()
    if expected_header is not None and header != expected_header:
        raise PartitionFormatError(
            f"{path.name}: expected header {expected_header!r}, found {header!r}", line=1
        )
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


class _Lines:
    """Significant lines of a text file with their numbers, for parsers
    that report the offending line."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._items: List[Tuple[int, str]] = []
        with open(self.path) as f:
            for number, line in enumerate(f, start=1):
                stripped = line.split("#", 1)[0].strip()
                if stripped:
                    self._items.append((number, stripped))
        self._next = 0

    def __iter__(self) -> Iterator[Tuple[int, str]]:
        return iter(self._items)

    @property
    def line(self) -> Optional[int]:
        if self._next < len(self._items):
            return self._items[self._next][0]
        return None

    def error(self, message: str) -> PartitionFormatError:
        return PartitionFormatError(f"{self.path.name}: {message}", line=self.line)

    def take(self) -> List[str]:
        if self._next >= len(self._items):
            raise PartitionFormatError(f"{self.path.name}: unexpected end of file")
        words = self._items[self._next][1].split()
        self._next += 1
        return words

    def keyword(self, name: str, count: int) -> List[str]:
        line = self.line
        words = self.take()
        if words[0] != name or len(words) != count + 1:
            raise PartitionFormatError(
                f"{self.path.name}: expected '{name}' with {count} values, "
                f"found {' '.join(words)!r}",
                line=line,
            )
        return words[1:]

    def integers(self, words: Sequence[str], line: Optional[int]) -> List[int]:
        try:
            return [int(w) for w in words]
        except ValueError:
            raise PartitionFormatError(f"{self.path.name}: expected integers", line=line) from None

    def coordinates(self, count: int, dim: int) -> np.ndarray:
        rows = []
        for _ in range(count):
            line = self.line
            words = self.take()
            try:
                row = [float(w) for w in words]
            except ValueError:
                raise PartitionFormatError(
                    f"{self.path.name}: expected {dim} coordinates", line=line
                ) from None
            if len(row) != dim:
                raise PartitionFormatError(
                    f"{self.path.name}: expected {dim} coordinates, found {len(row)}", line=line
                )
            rows.append(row)
        return np.array(rows, dtype=float).reshape(count, dim)


def write_partition(path: PathLike, partition: CellPartition) -> Path:
    """Export a partition in the plain text format (version 1)."""
    cell_blocks = []
    for cell in partition.cells:
        lines = [
            CELL_LINE.format(owner=cell.owner, nverts=len(cell.vertices), nfaces=len(cell.faces))
        ]
        lines += [_row(v) for v in cell.vertices]
        lines += [
            FACE_LINE.format(count=len(face), indices=" ".join(map(str, face)))
            for face in cell.faces
        ]
        cell_blocks.append("\n".join(lines))

    facet_blocks = []
    for facet in partition.facets:
        if facet.is_internal:
            head = INTERNAL_FACET_LINE.format(
                e1=facet.cells[0], e2=facet.cells[1], nverts=len(facet.vertices)
            )
        else:
            head = EXTERNAL_FACET_LINE.format(e1=facet.cells[0], nverts=len(facet.vertices))
        facet_blocks.append("\n".join([head] + [_row(v) for v in facet.vertices]))

    text = PARTITION_TEMPLATE.format(
        header=PARTITION_HEADER,
        dim=partition.dim,
        n=partition.n,
        points="\n".join(_row(p) for p in partition.points.positions),
        cells="\n".join(cell_blocks),
        m=len(partition.facets),
        facets="\n".join(facet_blocks),
    )
    path = _write_text(path, text)
    logger.info(f"Wrote partition of {partition.n} cells to {path}")
    return path


def read_partition(path: PathLike) -> CellPartition:
    """Import a partition; cell and facet geometry is recomputed from the
    stored vertices."""
    lines = _Lines(path)
    line = lines.line
    dim = lines.integers(lines.keyword("dim", 1), line)[0]
    if dim not in (2, 3):
        raise PartitionFormatError(f"{lines.path.name}: dim must be 2 or 3", line=line)
    line = lines.line
    n = lines.integers(lines.keyword("points", 1), line)[0]
    points = PointCloud(lines.coordinates(n, dim))

    line = lines.line
    if lines.integers(lines.keyword("cells", 1), line)[0] != n:
        raise PartitionFormatError(f"{lines.path.name}: expected {n} cells", line=line)
    cells: List[Optional[Cell]] = [None] * n
    for _ in range(n):
        line = lines.line
        owner, nverts, nfaces = lines.integers(lines.keyword("cell", 3), line)
        if not 0 <= owner < n or cells[owner] is not None:
            raise PartitionFormatError(
                f"{lines.path.name}: bad or repeated owner {owner}", line=line
            )
        vertices = lines.coordinates(nverts, dim)
        faces = []
        for _ in range(nfaces):
            line = lines.line
            words = lines.take()
            if words[0] != "face":
                raise lines.error("expected a face line")
            count, *indices = lines.integers(words[1:], line)
            if count != len(indices) or any(not 0 <= i < nverts for i in indices):
                raise PartitionFormatError(f"{lines.path.name}: malformed face", line=line)
            faces.append(indices)
        cells[owner] = Cell.from_vertices(owner, vertices, faces)

    line = lines.line
    m = lines.integers(lines.keyword("facets", 1), line)[0]
    facets: List[Facet] = []
    for _ in range(m):
        line = lines.line
        words = lines.take()
        if words[:2] == ["facet", "internal"] and len(words) == 5:
            e1, e2, nverts = lines.integers(words[2:], line)
            owners = (e1, e2)
            kind = FacetKind.INTERNAL
        elif words[:2] == ["facet", "external"] and len(words) == 4:
            e1, nverts = lines.integers(words[2:], line)
            owners = (e1,)
            kind = FacetKind.EXTERNAL
        else:
            raise PartitionFormatError(
                f"{lines.path.name}: expected a facet line, found {' '.join(words)!r}", line=line
            )
        if any(not 0 <= c < n for c in owners):
            raise PartitionFormatError(f"{lines.path.name}: facet cell out of range", line=line)
        vertices = lines.coordinates(nverts, dim)
        facets.append(
            Facet.from_vertices(
                kind,
                owners,
                vertices,
                cells[e1].centroid,
                owner_positions=points.positions[list(owners)] if len(owners) == 2 else None,
            )
        )
    return CellPartition.build(points, cells, facets)


def read_points(path: PathLike) -> np.ndarray:
    """Plain coordinate list: one point per line, separated by spaces or
    commas; ``#`` starts a comment. A partition file yields its points."""
    lines = _Lines(path)
    items = list(lines)
    if items and items[0][1].split()[0] == "dim":
        return read_partition(path).points.positions
    rows = []
    for number, text in items:
        try:
            rows.append([float(w) for w in re.split(r"[\s,]+", text)])
        except ValueError:
            raise PartitionFormatError(
                f"{lines.path.name}: expected numbers", line=number
            ) from None
        if len(rows[-1]) not in (2, 3) or len(rows[-1]) != len(rows[0]):
            raise PartitionFormatError(
                f"{lines.path.name}: every row needs the same 2 or 3 coordinates", line=number
            )
    if not rows:
        raise PartitionFormatError(f"{lines.path.name}: no points found")
    return np.array(rows, dtype=float)


def read_polygon(path: PathLike) -> np.ndarray:
    vertices = read_points(path)
    if vertices.shape[1] != 2 or len(vertices) < 3:
        raise PartitionFormatError(f"{Path(path).name}: a polygon needs at least 3 (x, y) vertices")
    return vertices


@dataclass
class Snapshot:
    positions: np.ndarray
    V: np.ndarray
    t: Optional[float] = None


def snapshot_path(directory: PathLike, index: int, fmt: str) -> Path:
    return Path(directory) / SNAPSHOT_NAME.format(index=index, extension=fmt)


def write_snapshot(
    partition: Positions,
    V: np.ndarray,
    t: float,
    fmt: str = "vtk",
    directory: PathLike = ".",
    index: int = 0,
) -> Path:
    """Write the nodal field as a legacy ASCII VTK point cloud or a flat CSV."""
    positions = _positions(partition)
    V = np.asarray(V, dtype=float)
    n, dim = positions.shape
    if len(V) != n:
        raise OutputError(f"{len(V)} values for {n} points")
    path = snapshot_path(directory, index, fmt)
    if fmt == "csv":
        return _write_columns(
            path,
            SNAPSHOT_HEADER.format(coordinates=_coordinates(dim)),
            np.column_stack([positions, V]),
            NUMBER_FORMAT,
        )
    if fmt != "vtk":
        raise OutputError(f"unknown snapshot format {fmt!r}")
    padded = np.zeros((n, 3))
    padded[:, :dim] = positions
    text = VTK_TEMPLATE.format(
        t=float(t),
        n=n,
        points="\n".join(_row(p) for p in padded),
        size=2 * n,
        cells="\n".join(f"1 {i}" for i in range(n)),
        types="\n".join([str(VTK_VERTEX)] * n),
        values="\n".join(_number(v) for v in V),
    )
    return _write_text(path, text)


def read_snapshot(path: PathLike) -> Snapshot:
    path = Path(path)
    if path.suffix == ".csv":
        header, data = _read_columns(path)
        dim = len(header.split(",")) - 1
        return Snapshot(positions=data[:, :dim], V=data[:, dim])

    text = path.read_text()
    words = text.split()
    title = text.splitlines()[1]
    match = re.search(r"t = (\S+) ms", title)
    start = words.index("POINTS")
    n = int(words[start + 1])
    points = np.array(words[start + 3 : start + 3 + 3 * n], dtype=float).reshape(n, 3)
    lookup = words.index("LOOKUP_TABLE")
    V = np.array(words[lookup + 2 : lookup + 2 + n], dtype=float)
    dim = 3 if np.any(points[:, 2] != 0) else 2
    return Snapshot(
        positions=points[:, :dim], V=V, t=float(match.group(1)) if match else None
    )


def write_trace(path: PathLike, times: np.ndarray, values: np.ndarray) -> Path:
    return _write_columns(path, TRACE_HEADER, np.column_stack([times, values]), NUMBER_FORMAT)


def read_trace(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    _, data = _read_columns(path, TRACE_HEADER)
    return data[:, 0], data[:, 1]


def write_probe_index(
    path: PathLike, probes: Sequence[Tuple[str, int, np.ndarray]]
) -> Path:
    dim = len(probes[0][2]) if probes else 2
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(PROBE_INDEX_HEADER.format(coordinates=_coordinates(dim)).split(","))
            for name, node, position in probes:
                writer.writerow([name, node] + [_number(x) for x in position])
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def read_probe_index(path: PathLike) -> List[Tuple[str, int, np.ndarray]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return [(row[0], int(row[1]), np.array(row[2:], dtype=float)) for row in rows[1:]]


def write_lat(path: PathLike, positions: Positions, lat: np.ndarray) -> Path:
    positions = _positions(positions)
    n, dim = positions.shape
    columns = np.column_stack([np.arange(n), positions, lat])
    return _write_columns(
        path,
        LAT_HEADER.format(coordinates=_coordinates(dim)),
        columns,
        ["%d"] + [NUMBER_FORMAT] * (dim + 1),
    )


def read_lat(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Node positions (cm) and LAT (ms) from a LAT table."""
    _, data = _read_columns(path)
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    return data[:, 1:-1], data[:, -1]


def write_table(path: PathLike, header: Sequence[str], rows: Sequence[Dict[str, object]]) -> Path:
    """Comma-separated metric table; floats at full precision."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow(
                    [_number(row[k]) if isinstance(row[k], float) else row[k] for k in header]
                )
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def read_table(path: PathLike) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@dataclass
class Checkpoint:
    t: float
    V: np.ndarray
    state: np.ndarray
    state_names: Tuple[str, ...]


def write_checkpoint(
    path: PathLike,
    t: float,
    V: np.ndarray,
    state: np.ndarray,
    state_names: Sequence[str] = (),
) -> Path:
    """Text checkpoint: header lines, then one row ``V s1 s2 ...`` per node."""
    V = np.asarray(V, dtype=float)
    state = np.asarray(state, dtype=float)
    state = state.reshape(len(V), state.size // len(V) if len(V) else 0)
    header = CHECKPOINT_TEMPLATE.format(
        t=float(t), n=len(V), names=" ".join(state_names) if state_names else "-"
    )
    body = "\n".join(_row(row) for row in np.column_stack([V, state]))
    return _write_text(path, header + body + "\n")


def read_checkpoint(path: PathLike) -> Checkpoint:
    lines = _Lines(path)
    line = lines.line
    try:
        t = float(lines.keyword("t", 1)[0])
    except ValueError:
        raise PartitionFormatError(f"{lines.path.name}: bad time", line=line) from None
    line = lines.line
    n = lines.integers(lines.keyword("nodes", 1), line)[0]
    words = lines.take()
    if words[0] != "states":
        raise lines.error("expected a states line")
    names = tuple(w for w in words[1:] if w != "-")
    data = lines.coordinates(n, 1 + len(names))
    return Checkpoint(t=t, V=data[:, 0].copy(), state=data[:, 1:].copy(), state_names=names)


def write_coo(path: PathLike, matrix: sp.spmatrix) -> Path:
    coo = sp.coo_matrix(matrix)
    header = COO_HEADER.format(rows=coo.shape[0], cols=coo.shape[1], nnz=coo.nnz)
    body = "\n".join(
        f"{i} {j} {_number(v)}" for i, j, v in zip(coo.row, coo.col, coo.data)
    )
    return _write_text(path, header + "\n" + body + "\n")


def read_coo(path: PathLike) -> sp.csr_matrix:
    path = Path(path)
    with open(path) as f:
        header = f.readline()
    match = re.search(r"matrix (\d+) x (\d+)", header)
    if match is None:
        raise PartitionFormatError(f"{path.name}: missing matrix header", line=1)
    shape = (int(match.group(1)), int(match.group(2)))
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.coo_matrix(
        (data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape
    ).tocsr()
