import numpy as np
import pytest

from fm_extractor.fixtures import write_fixtures
from fm_extractor.meshio import load_obj, sample_surface


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("objs")
    write_fixtures(out)
    return out


class TestLoadObj:
    def test_groups_become_labels(self, fixture_dir):
        mesh = load_obj(fixture_dir / "radio.obj")
        assert mesh.group_names == ["case", "button_a", "button_b"]
        assert set(np.unique(mesh.face_labels)) == {0, 1, 2}

    def test_quads_are_triangulated(self, fixture_dir):
        mesh = load_obj(fixture_dir / "radio.obj")
        assert mesh.faces.shape[1] == 3
        # a box has 6 quads -> 12 triangles; the radio holds three boxes
        assert (mesh.face_labels == 1).sum() == 12

    def test_missing_faces_rejected(self, tmp_path):
        (tmp_path / "empty.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n")
        with pytest.raises(ValueError):
            load_obj(tmp_path / "empty.obj")


class TestSampling:
    def test_normalized_and_labeled(self, fixture_dir):
        mesh = load_obj(fixture_dir / "mug.obj")
        cloud = sample_surface(mesh, 3000, seed=1)
        span = cloud.positions.max(0) - cloud.positions.min(0)
        assert np.linalg.norm(span) == pytest.approx(1.0, abs=1e-5)
        assert np.abs(cloud.positions.max(0) + cloud.positions.min(0)).max() < 1e-5
        assert set(np.unique(cloud.labels)) == {0, 1}
        assert np.abs(np.linalg.norm(cloud.normals, axis=1) - 1.0).max() < 1e-5

    def test_deterministic_per_seed(self, fixture_dir):
        mesh = load_obj(fixture_dir / "lamp.obj")
        a = sample_surface(mesh, 500, seed=3)
        b = sample_surface(mesh, 500, seed=3)
        assert np.array_equal(a.positions, b.positions)

    def test_area_weighting(self, fixture_dir):
        # the lamp shade has far more area than the thin pole
        mesh = load_obj(fixture_dir / "lamp.obj")
        cloud = sample_surface(mesh, 4000, seed=0)
        shade_frac = float((cloud.labels == 1).mean())
        assert shade_frac > 0.5
