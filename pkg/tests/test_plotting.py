import numpy as np
from matplotlib.image import imread

from srpsbl.geometry import GridPoint
from srpsbl.localize import DoaEstimate
from srpsbl.plotting import plot_le_vs_duration, plot_map


def test_map_png(tmp_path, coarse_grid):
    v = coarse_grid.unit_vectors @ GridPoint(30, 60).unit_vector
    path = plot_map(v, coarse_grid, tmp_path / "m.png", truths=[GridPoint(30, 60)],
                    estimates=[DoaEstimate(30.0, 60.0, 1.0, 1)], title="test")
    img = imread(path)
    assert img.ndim == 3 and img.shape[0] > 100 and img.shape[1] > 100
    assert np.std(img[..., :3]) > 0.05


def test_le_vs_duration_png(tmp_path):
    rows = [{"method": m, "duration_s": d, "median_le_deg": le, "q1_le_deg": le - 1,
             "q3_le_deg": le + 2}
            for m, base in (("srp_sbl", 3.0), ("srp_s", 8.0))
            for d, le in zip((0.25, 0.5, 1.0, 2.0), (base + 1, base, base, base))]
    path = plot_le_vs_duration(rows, tmp_path / "le.png")
    assert path.read_bytes()[:4] == b"\x89PNG"


def test_flat_map_renders(tmp_path, coarse_grid):
    path = plot_map(np.zeros(len(coarse_grid)), coarse_grid, tmp_path / "z.png")
    assert path.stat().st_size > 0
