import numpy as np
import scipy.sparse as sp
from fpm_cardio.diagnostics import (
    Check,
    Status,
    build_rich_tree,
    build_table,
    diagnose,
    get_icon,
)
from fpm_cardio.voxel import build_voxel_partition
from rich.console import Console
from rich.table import Table


def render(renderable) -> str:
    console = Console(width=120, record=True)
    console.print(renderable)
    return console.export_text()


class TestDiagnose:
    def test_healthy_operators(self, assemble):
        _, partition = build_voxel_partition((2, 2), 0.1)
        diagnostics = diagnose(partition, assemble(partition))
        assert diagnostics.passed
        assert [check.name for check in diagnostics.checks] == [
            "row sums of K",
            "asymmetry of K",
            "smallest eigenvalue of K",
        ]
        assert diagnostics.n == 4
        assert diagnostics.internal_facets == 4
        assert diagnostics.external_facets == 8

    def test_without_eigenvalue(self, grid_partition, grid_operators):
        diagnostics = diagnose(grid_partition, grid_operators, eigenvalue=False)
        assert len(diagnostics.checks) == 2
        data = diagnostics.to_dict()
        assert data["checks"][0]["status"] == "ok"
        assert data["measure"] == diagnostics.measure

    def test_broken_operator_fails(self, grid_partition, grid_operators):
        grid_operators.K = grid_operators.K + sp.eye(grid_operators.n, format="csr")
        diagnostics = diagnose(grid_partition, grid_operators, eigenvalue=False)
        assert not diagnostics.passed
        assert diagnostics.checks[0].status is Status.FAILED

    def test_to_string(self, grid_partition, grid_operators):
        text = diagnose(grid_partition, grid_operators, eigenvalue=False).to_string(indent=2)
        assert text.startswith("  16 points (2D)")
        assert "24 internal, 16 external" in text
        assert "row sums of K" in text

    def test_tree(self, grid_partition, grid_operators):
        diagnostics = diagnose(grid_partition, grid_operators, eigenvalue=False)
        text = render(diagnostics.to_tree())
        assert "16 points" in text
        assert "consistent C" in text
        assert get_icon(Status.OK) in render(build_rich_tree(diagnostics))


def test_check_to_string():
    assert Check("x", 1.5e-3, Status.WARNING).to_string() == "x: 1.500e-03 (warning)"


def test_build_table():
    rows = [{"probe": "a", "node": 1, "lat_ms": 2.5}, {"probe": "b", "node": 2, "lat_ms": np.nan}]
    table = build_table(rows, ["probe", "node", "lat_ms", "apd90_ms"], title="Probes")
    assert isinstance(table, Table)
    assert table.row_count == 2
    text = render(table)
    assert "nan" in text
    assert "2.5" in text
