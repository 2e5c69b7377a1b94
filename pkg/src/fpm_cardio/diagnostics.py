from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

from rich.table import Table
from rich.tree import Tree

from .assembly import GlobalOperators
from .geometry import CellPartition


class Status(Enum):
    OK = "ok"
    WARNING = "warning"
    FAILED = "failed"


# Residual limits relative to ||K||_inf.
NULLSPACE_RTOL = 1e-10
SYMMETRY_RTOL = 1e-12
EIGENVALUE_RTOL = 1e-10


@dataclass
class Check:
    name: str
    value: float
    status: Status

    def to_string(self) -> str:
        return f"{self.name}: {self.value:.3e} ({self.status.value})"


@dataclass
class OperatorDiagnostics:
    """Summary of a discretization, printed by ``fpm-cardio check``."""

    n: int
    dim: int
    internal_facets: int
    external_facets: int
    measure: float
    nnz: int
    lumped: bool
    norm_inf: float
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.status is not Status.FAILED for check in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for check in data["checks"]:
            check["status"] = check["status"].value
        return data

    def to_string(self, indent: int = 0) -> str:
        spacer = " " * indent
        lines = [
            f"{spacer}{self.n} points ({self.dim}D), measure {self.measure:.6g} cm^{self.dim}",
            f"{spacer}facets: {self.internal_facets} internal, {self.external_facets} external",
            f"{spacer}K: nnz {self.nnz}, ||K||_inf {self.norm_inf:.6g}",
        ]
        for check in self.checks:
            lines.append(" " * (indent + 4) + check.to_string())
        return "\n".join(lines)

    def to_tree(self) -> Tree:
        return build_rich_tree(self)


def get_icon(status: Status) -> str:
    return {
        Status.OK: "✅",
        Status.WARNING: "⚠️",
        Status.FAILED: "❌",
    }.get(status, "❓")


def _grade(value: float, limit: float) -> Status:
    if value <= limit:
        return Status.OK
    if value <= 1e3 * limit:
        return Status.WARNING
    return Status.FAILED


def diagnose(
    partition: CellPartition, operators: GlobalOperators, eigenvalue: bool = True
) -> OperatorDiagnostics:
    scale = max(operators.norm_inf(), 1e-300)
    checks = [
        Check(
            "row sums of K",
            operators.nullspace_error(),
            _grade(operators.nullspace_error(), NULLSPACE_RTOL * scale),
        ),
        Check(
            "asymmetry of K",
            operators.symmetry_error(),
            _grade(operators.symmetry_error(), SYMMETRY_RTOL * scale),
        ),
    ]
    if eigenvalue:
        smallest = operators.min_eigenvalue()
        checks.append(
            Check("smallest eigenvalue of K", smallest, _grade(-smallest, EIGENVALUE_RTOL * scale))
        )
    return OperatorDiagnostics(
        n=partition.n,
        dim=partition.dim,
        internal_facets=len(partition.internal_facets),
        external_facets=len(partition.external_facets),
        measure=partition.total_measure,
        nnz=operators.K.nnz,
        lumped=operators.lumped,
        norm_inf=operators.norm_inf(),
        checks=checks,
    )


def build_rich_tree(diagnostics: OperatorDiagnostics) -> Tree:
    icon = get_icon(Status.OK if diagnostics.passed else Status.FAILED)
    tree = Tree(
        f"{icon} [bold]{diagnostics.n} points[/] ([dim]{diagnostics.dim}D[/]): "
        f"measure {diagnostics.measure:.6g} cm^{diagnostics.dim}"
    )
    tree.add(
        f"facets: {diagnostics.internal_facets} internal, "
        f"{diagnostics.external_facets} external"
    )
    mass = "lumped" if diagnostics.lumped else "consistent"
    tree.add(f"K: nnz {diagnostics.nnz}, ||K||_inf {diagnostics.norm_inf:.6g}, {mass} C")
    checks = tree.add("[bold]checks[/]")
    for check in diagnostics.checks:
        checks.add(
            f"{get_icon(check.status)} {check.name}: {check.value:.3e} "
            f"([dim]{check.status.value}[/])"
        )
    return tree


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return "nan" if value != value else f"{value:.6g}"
    return str(value)


def build_table(
    rows: Sequence[Dict[str, Any]], columns: Sequence[str], title: Optional[str] = None
) -> Table:
    """A rich table of metric rows; missing or NaN values print as ``-``/``nan``."""
    table = Table(title=title)
    for column in columns:
        table.add_column(column, justify="left" if column.startswith("probe") else "right")
    for row in rows:
        table.add_row(*[_cell(row.get(column)) for column in columns])
    return table
