import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spherefm.mesh import (
    Mesh, NeighborGraph, ObjParseError, SymmetryMap, load_obj, mesh_regularizer, residual_loss,
    rmse_point_to_plane, rmse_point_to_point, save_obj, smooth_loss, symmetry_loss, vertex_normals,
)
from spherefm.synth import grid_faces

coords = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def grid_mesh(rows=4, cols=5, z=0.0):
    ys, xs = np.mgrid[0:rows, 0:cols].astype(float)
    pts = np.stack([xs.ravel(), ys.ravel(), np.full(rows * cols, z)], 1)
    return Mesh(pts, grid_faces(rows, cols))


# --- OBJ -------------------------------------------------------------------

def test_load_single_triangle(tmp_path):
    m = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.vertex_count == 3
    assert m.faces.tolist() == [[0, 1, 2]]


def test_quad_is_fan_triangulated(tmp_path):
    m = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_empty_file_has_no_vertices(tmp_path):
    with pytest.raises(ObjParseError, match="no vertices"):
        load_obj(write(tmp_path, ""))


def test_ignores_comments_normals_and_slash_indices(tmp_path):
    text = "# header\nv 0 0 0\nv 1 0 0 # trailing\nvn 0 0 1\nv 0 1 0\ng part\nf 1/1/1 2//1 -1\n"
    m = load_obj(write(tmp_path, text))
    assert m.faces.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize("text,line", [
    ("v 0 0 0\nv 1 x 0\n", 2),
    ("v 0 0\n", 1),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n", 4),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n", 4),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 1\nv 2 2 2\nf 1 2 3 4 5\n", 6),
    ("v 0 0 nan\n", 1),
    ("v 0 0 0\nf 0 1 1\n", 2),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(ObjParseError) as exc:
        load_obj(write(tmp_path, text))
    assert exc.value.lineno == line
    assert f":{line}" in str(exc.value)


def test_round_trip_exact(tmp_path, rng):
    m = Mesh(rng.standard_normal((30, 3)) * 1e3, rng.integers(0, 30, (12, 3)))
    p = tmp_path / "r.obj"
    save_obj(m, p)
    back = load_obj(p)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.faces, m.faces)


def test_mesh_without_faces_writes_only_vertices(tmp_path):
    p = tmp_path / "v.obj"
    save_obj(Mesh(np.ones(6)), p)
    lines = p.read_text().splitlines()
    assert len(lines) == 2 and all(ln.startswith("v ") for ln in lines)
    assert load_obj(p).faces is None


def test_unwritable_path_raises(tmp_path):
    with pytest.raises(OSError):
        save_obj(Mesh(np.ones(3)), tmp_path / "missing" / "x.obj")


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 20).map(lambda n: (n, 3)), elements=coords))
def test_round_trip_property(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("rt") / "m.obj"
    save_obj(Mesh(pts), p)
    np.testing.assert_array_equal(load_obj(p).points, pts)


def test_mesh_validation():
    with pytest.raises(ValueError):
        Mesh(np.ones(4))
    with pytest.raises(ValueError):
        Mesh(np.array([0.0, np.inf, 0]))
    with pytest.raises(ValueError):
        Mesh(np.zeros(9), np.array([[0, 1, 3]]))
    m = Mesh(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        m.vertices[0] = 1.0


# --- RMSE --------------------------------------------------------------------

def test_rmse_point_to_point_examples(triangle):
    assert rmse_point_to_point(triangle, triangle) == 0.0
    shifted = triangle.with_vertices(triangle.points + [1.0, 0, 0])
    assert rmse_point_to_point(triangle, shifted) == pytest.approx(1.0, abs=1e-15)
    a = Mesh(np.zeros((2, 3)))
    b = Mesh(np.array([[3.0, 0, 0], [0, 4, 0]]))
    assert rmse_point_to_point(a, b) == pytest.approx(math.sqrt(12.5), abs=1e-15)


def test_rmse_mismatch(triangle):
    with pytest.raises(ValueError):
        rmse_point_to_point(triangle, Mesh(np.zeros(3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5, 3), elements=coords))
def test_rmse_symmetry_and_triangle_inequality(pts):
    a, b, c = (Mesh(p) for p in pts)
    assert rmse_point_to_point(a, b) == rmse_point_to_point(b, a)
    assert rmse_point_to_point(a, c) <= rmse_point_to_point(a, b) + rmse_point_to_point(b, c) + 1e-9


def test_point_to_plane_on_flat_grid():
    target = grid_mesh()
    assert rmse_point_to_plane(target, target) == 0.0
    tangential = target.with_vertices(target.points + [0.3, -0.7, 0.0])
    assert rmse_point_to_plane(tangential, target) == pytest.approx(0.0, abs=1e-15)
    lifted = target.with_vertices(target.points + [0.0, 0.0, 0.25])
    assert rmse_point_to_plane(lifted, target) == pytest.approx(0.25, abs=1e-12)


def test_grid_normals_point_up():
    np.testing.assert_allclose(vertex_normals(grid_mesh()), np.tile([0, 0, 1.0], (20, 1)), atol=1e-15)


def test_point_to_plane_bounded_by_point_to_point(rng):
    target = grid_mesh(5, 5)
    bumpy = target.with_vertices(target.points + rng.normal(0, 0.1, (25, 3)) * [0, 0, 1])
    for _ in range(20):
        src = bumpy.with_vertices(bumpy.points + rng.normal(0, 0.5, (25, 3)))
        assert rmse_point_to_plane(src, bumpy) <= rmse_point_to_point(src, bumpy) + 1e-12


def test_point_to_plane_errors(triangle):
    with pytest.raises(ValueError):
        rmse_point_to_plane(triangle, Mesh(triangle.vertices))
    # fourth vertex is referenced by no face
    loose = Mesh(np.vstack([triangle.points, [5, 5, 5]]), triangle.faces)
    with pytest.raises(ValueError, match="degenerate"):
        rmse_point_to_plane(loose, loose)


# --- regularizers ---------------------------------------------------------------

def path_graph(n):
    return NeighborGraph.from_adjacency([[j for j in (i - 1, i + 1) if 0 <= j < n] for i in range(n)])


def test_smooth_loss_examples():
    g = path_graph(3)
    assert smooth_loss(Mesh(np.ones((3, 3))), g) == 0.0
    line = Mesh(np.array([[0.0, 0, 0], [2, 0, 0], [4, 0, 0]]))
    assert smooth_loss(line, g) == pytest.approx(4.0 / 3.0, abs=1e-15)
    assert smooth_loss(line.with_vertices(line.vertices * 3.5), g) == pytest.approx(3.5 * 4.0 / 3.0)


def test_smooth_loss_matches_loop_oracle(rng):
    m = grid_mesh(4, 4)
    m = m.with_vertices(m.vertices + rng.normal(0, 0.3, m.vertices.size))
    g = NeighborGraph.from_faces(m.faces, m.vertex_count)
    adj = [set() for _ in range(m.vertex_count)]
    for a, b, c in m.faces.tolist():
        for i, j in ((a, b), (b, c), (c, a)):
            adj[i].add(j)
            adj[j].add(i)
    expect = np.mean([np.linalg.norm(m.points[i] - np.mean([m.points[j] for j in adj[i]], axis=0))
                      for i in range(m.vertex_count)])
    assert smooth_loss(m, g) == pytest.approx(expect, abs=1e-12)


def test_smooth_loss_isolated_vertex():
    g = NeighborGraph.from_adjacency([[1], [0], []])
    with pytest.raises(ValueError, match="isolated"):
        smooth_loss(Mesh(np.zeros(9)), g)


def test_symmetry_examples():
    sym = SymmetryMap([0], "x")
    assert symmetry_loss(Mesh(np.array([1.5, 2.0, -3.0])), sym) == pytest.approx(3.0)
    pair = SymmetryMap([1, 0], "x")
    assert symmetry_loss(Mesh(np.array([[1.0, 2, 3], [-1, 2, 3]])), pair) == 0.0


def test_symmetry_matches_direct_oracle(rng):
    pts = rng.standard_normal((4, 3))
    mirror = [2, 3, 0, 1]
    sym = SymmetryMap(mirror, "y")
    flipped = np.array([pts[mirror[i]] * [1, -1, 1] for i in range(4)])
    assert symmetry_loss(Mesh(pts), sym) == pytest.approx(np.abs(pts - flipped).sum(), abs=1e-14)
    # invariant under flipping the input
    assert symmetry_loss(Mesh(sym.flip(pts)), sym) == pytest.approx(symmetry_loss(Mesh(pts), sym), abs=1e-14)


def test_symmetry_map_validation_and_io(tmp_path):
    with pytest.raises(ValueError, match="involution"):
        SymmetryMap([1, 2, 0])
    with pytest.raises(ValueError):
        SymmetryMap([0], "w")
    sym = SymmetryMap([3, 2, 1, 0], "z")
    p = tmp_path / "sym.csv"
    sym.save(p)
    assert p.read_text().splitlines()[:2] == ["axis=z", "index,mirror_index"]
    back = SymmetryMap.load(p)
    assert back.axis == 2 and back.mirror_index.tolist() == [3, 2, 1, 0]
    p.write_text("index,mirror_index\n0,0\n")
    with pytest.raises(ValueError, match="axis"):
        SymmetryMap.load(p)
    with pytest.raises(ValueError):
        symmetry_loss(Mesh(np.zeros(6)), sym)


def test_residual_loss(rng):
    mean = Mesh(rng.standard_normal(12))
    assert residual_loss(mean, mean) == 0.0
    v = mean.vertices.copy()
    v[5] += 2.0
    assert residual_loss(Mesh(v), mean) == pytest.approx(2.0, abs=1e-14)
    other = Mesh(rng.standard_normal(12))
    assert residual_loss(other, mean) == pytest.approx(np.abs(other.vertices - mean.vertices).sum())


def test_regularizers_positive_off_fixed_points(rng):
    m = grid_mesh(3, 3)
    g = NeighborGraph.from_faces(m.faces, 9)
    sym = SymmetryMap([2, 1, 0, 5, 4, 3, 8, 7, 6], "x")
    centered = m.with_vertices(m.points - [1.0, 0, 0])
    assert symmetry_loss(centered, sym) == pytest.approx(0.0, abs=1e-15)
    noisy = centered.with_vertices(centered.vertices + rng.normal(0, 0.1, 27))
    assert smooth_loss(noisy, g) > 0 and symmetry_loss(noisy, sym) > 0 and residual_loss(noisy, centered) > 0
    total = mesh_regularizer(noisy, centered, g, sym)
    assert total == pytest.approx(smooth_loss(noisy, g) + symmetry_loss(noisy, sym) + residual_loss(noisy, centered))


def test_neighbor_graph_from_faces():
    g = NeighborGraph.from_faces([[0, 1, 2], [0, 2, 3]], 4)
    assert sorted(g.neighbors(0).tolist()) == [1, 2, 3]
    assert g.degrees().tolist() == [3, 2, 3, 2]
