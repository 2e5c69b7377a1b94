import numpy as np
import pytest
from fpm_cardio.errors import DegenerateCellError, DegenerateGeometryError, DomainError
from fpm_cardio.geometry import (
    Cell,
    Facet,
    FacetKind,
    PointCloud,
    SupportDomain,
    build_supports,
    first_ring_support,
)
from fpm_cardio.voronoi import build_voronoi_partition_2d, rectangle


class TestPointCloud:
    def test_dimensions(self):
        points = PointCloud(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        assert points.n == 3
        assert points.dim == 2
        assert len(points) == 3

    def test_positions_are_read_only(self):
        points = PointCloud(np.array([[0.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(ValueError):
            points.positions[0, 0] = 5.0

    def test_coincident_points(self):
        with pytest.raises(DegenerateCellError, match="coincide"):
            PointCloud(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]))

    @pytest.mark.parametrize(
        "positions",
        [
            np.zeros((3, 1)),
            np.zeros((3, 4)),
            np.zeros(3),
            np.array([[0.0, np.nan], [1.0, 0.0]]),
        ],
    )
    def test_invalid_positions(self, positions):
        with pytest.raises(DomainError):
            PointCloud(positions)


class TestCell:
    def test_clockwise_polygon_is_reoriented(self):
        square = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
        cell = Cell.from_vertices(0, square)
        assert cell.measure == pytest.approx(1.0)
        np.testing.assert_allclose(cell.centroid, [0.5, 0.5])

    def test_degenerate_cell(self):
        segment = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(DegenerateCellError):
            Cell.from_vertices(3, segment)


class TestFacet:
    def test_normal_points_away_from_the_cell(self):
        edge = np.array([[1.0, 1.0], [1.0, 0.0]])
        facet = Facet.from_vertices(
            FacetKind.INTERNAL,
            (0, 1),
            edge,
            cell_centroid=np.array([0.5, 0.5]),
            owner_positions=np.array([[0.5, 0.5], [1.5, 0.5]]),
        )
        np.testing.assert_allclose(facet.normal, [1.0, 0.0])
        assert facet.measure == pytest.approx(1.0)
        assert facet.h_e == pytest.approx(1.0)
        assert facet.is_internal

    def test_internal_facet_needs_owners(self):
        with pytest.raises(DegenerateCellError):
            Facet.from_vertices(
                FacetKind.INTERNAL, (0, 1), np.array([[1.0, 1.0], [1.0, 0.0]]), np.zeros(2)
            )


class TestCellPartition:
    def test_adjacency_is_symmetric(self, random_partition):
        for i, neighbors in enumerate(random_partition.adjacency):
            for j in neighbors:
                assert i in random_partition.adjacency[j]

    def test_facet_lists(self, random_partition):
        internal = set(random_partition.internal_facets)
        external = set(random_partition.external_facets)
        assert not internal & external
        assert len(internal) + len(external) == len(random_partition.facets)

    def test_validate_measure_closure(self, grid_partition):
        grid_partition.validate(domain_measure=0.16)
        with pytest.raises(DomainError):
            grid_partition.validate(domain_measure=0.17)

    def test_validate_detects_a_dropped_facet(self, grid_partition):
        grid_partition.cells[0].facets.pop()
        with pytest.raises(DegenerateCellError):
            grid_partition.validate()


class TestSupport:
    def test_interior_voxel_in_3d(self, cube_partition):
        support = first_ring_support(cube_partition, 13)
        assert support.m == 6
        assert support.ring_depth == 1
        assert support.neighbors == (4, 10, 12, 14, 16, 22)
        assert support.indices[0] == 13

    def test_corner_pixel_in_2d(self, grid_partition):
        support = first_ring_support(grid_partition, 0)
        assert support.neighbors == (1, 4)
        assert support.ring_depth == 1

    def test_collinear_points(self):
        points = np.array([[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]])
        partition = build_voronoi_partition_2d(points, rectangle((0.0, 0.0), (1.0, 1.0)))
        with pytest.raises(DegenerateGeometryError) as error:
            first_ring_support(partition, 0)
        assert error.value.point == 0

    def test_build_supports(self, grid_partition):
        supports = build_supports(grid_partition, threads=4)
        assert [s.center for s in supports] == list(range(16))
        assert all(isinstance(s, SupportDomain) for s in supports)
        assert sorted(s.m for s in supports) == [2] * 4 + [3] * 8 + [4] * 4
