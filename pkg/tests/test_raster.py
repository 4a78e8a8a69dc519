import numpy as np

from reenact.camera import CameraIntrinsics
from reenact.geometry import RigidTransform
from reenact.meshgen import plane_grid, uv_sphere
from reenact.raster import rasterize, render_synthetic
from reenact.shading import NUM_SH, sh_basis, sh_basis_gradient

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=160.0, cy=120.0, width=320, height=240)


def test_sphere_silhouette_radius():
    # sphere of radius 0.5 centered at z=2; contour radius = f*r/sqrt(d^2-r^2)
    sphere = uv_sphere(0.5, (0, 0, 2.0), rings=96, segments=128)
    buffers = rasterize(sphere.vertices, sphere.faces, K)
    ys, xs = np.nonzero(buffers.coverage)
    r_px = np.sqrt((xs - K.cx) ** 2 + (ys - K.cy) ** 2).max()
    expected = 500.0 * 0.5 / np.sqrt(4.0 - 0.25)
    assert abs(r_px - expected) < 1.0


def test_constant_band0_light_gives_constant_shading():
    sphere = uv_sphere(0.5, (0, 0, 2.0), rings=48, segments=64)
    light = np.zeros((NUM_SH, 3))
    light[0] = 2.0
    albedo = np.full((sphere.num_vertices, 3), 0.5)
    frame = render_synthetic(sphere, RigidTransform.identity(), K, light, albedo)
    vals = frame.color[frame.coverage].astype(np.float64)
    assert np.ptp(vals, axis=0).max() < 1e-6
    expected = 0.5 * 2.0 * 0.28209479177387814
    assert np.allclose(vals, expected, atol=1e-6)


def test_plane_depth_exact():
    plane = plane_grid(2.0, 2.0, 1.5, rows=4, cols=4)
    albedo = np.full((plane.num_vertices, 3), 0.7)
    light = np.zeros((NUM_SH, 3))
    light[0] = 1.5
    frame = render_synthetic(plane, RigidTransform.identity(), K, light, albedo)
    d = frame.depth[frame.depth > 0]
    assert d.size > 1000
    assert np.abs(d - 1.5).max() < 1e-6


def test_sphere_depth_matches_analytic():
    sphere = uv_sphere(0.5, (0, 0, 2.0), rings=128, segments=160)
    buffers = rasterize(sphere.vertices, sphere.faces, K)
    ys, xs = np.nonzero(buffers.coverage)
    # analytic first intersection of the pixel ray with the sphere
    dx = (xs - K.cx) / K.fx
    dy = (ys - K.cy) / K.fy
    a = dx * dx + dy * dy + 1.0
    b = -2.0 * 2.0  # -2 * dot(dir, center) with center (0,0,2), dir=(dx,dy,1)
    c = 4.0 - 0.25
    disc = b * b - 4 * a * c
    ok = disc > 1e-6
    t = (-b - np.sqrt(disc[ok])) / (2 * a[ok])
    z_true = t  # dir_z == 1
    z_img = buffers.depth[ys[ok], xs[ok]]
    # half a pixel's depth footprint: |dz/du| * 0.5, one pixel = 1/fx in ray slope
    r = np.sqrt(dx[ok] ** 2 + dy[ok] ** 2)
    dz_du = np.abs(z_true * r + (2.0 * a[ok] * z_true + b) * r / np.sqrt(disc[ok])) / K.fx
    tol = 0.5 * dz_du + 2e-3  # 2 mm floor: chordal gap of the polyhedral mesh
    assert (np.abs(z_img - z_true) <= tol).mean() > 0.995
    interior = disc > 0.05
    assert np.abs(z_img[interior[ok]] - z_true[interior[ok]]).max() < 2e-3


def test_depth_ties_and_occlusion():
    near = plane_grid(0.5, 0.5, 1.0, rows=3, cols=3)
    far = plane_grid(2.0, 2.0, 2.0, rows=3, cols=3)
    verts = np.concatenate([far.vertices, near.vertices])
    faces = np.concatenate([far.faces, near.faces + far.num_vertices])
    buffers = rasterize(verts, faces, K)
    assert abs(buffers.depth[120, 160] - 1.0) < 1e-9
    assert abs(buffers.depth[10, 10] - 2.0) < 1e-9


def test_degenerate_triangles_skipped():
    verts = np.array([[0, 0, 1.0], [0, 0, 1.0], [0.1, 0.1, 1.0], [-0.2, 0, 1.0],
                      [0.2, 0, 1.0], [0, 0.2, 1.0]])
    faces = np.array([[0, 1, 2], [3, 4, 5]])  # first is degenerate
    buffers = rasterize(verts, faces, K)
    assert (buffers.face_id[buffers.coverage] == 1).all()


def test_interpolation_linear_field():
    plane = plane_grid(1.0, 1.0, 1.25, rows=6, cols=6)
    buffers = rasterize(plane.vertices, plane.faces, K)
    # interpolating x coordinate should reproduce the pixel's unprojection
    ximg = buffers.interpolate(plane.vertices[:, 0], plane.faces)
    ys, xs = np.nonzero(buffers.coverage)
    x_true = (xs - K.cx) / K.fx * buffers.depth[ys, xs]
    assert np.abs(ximg[ys, xs] - x_true).max() < 1e-9


def test_sh_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        g = sh_basis_gradient(n)
        eps = 1e-6
        for k in range(3):
            dn = np.zeros(3)
            dn[k] = eps
            fd = (sh_basis(n + dn) - sh_basis(n - dn)) / (2 * eps)
            assert np.abs(fd - g[:, k]).max() < 1e-6
