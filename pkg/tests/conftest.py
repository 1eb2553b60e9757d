import numpy as np
import pytest

from viewsynth.dataset import PairDataset, ViewSpec, generate_dataset
from viewsynth.geometry import make_camera, make_procedural_object
from viewsynth.rasterize import rasterize


@pytest.fixture(scope="session")
def car_mesh():
    return make_procedural_object(7, "car-like")


@pytest.fixture(scope="session")
def block_mesh():
    return make_procedural_object(3, "block-stack")


@pytest.fixture(scope="session")
def cam_factory():
    def make(azimuth=0, elevation=0, radius=2.5, size=64):
        return make_camera(azimuth, elevation, radius, size)

    return make


@pytest.fixture(scope="session")
def rendered_pair(car_mesh):
    """(src, tgt, theta, cam_tgt) with a 60-degree azimuth advance."""
    theta = 60
    cam_s = make_camera(40, 10, 2.5, 64)
    cam_t = make_camera(40 + theta, 10, 2.5, 64)
    return rasterize(car_mesh, cam_s), rasterize(car_mesh, cam_t), theta, cam_t


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Overfit-scale dataset: 1 car-like mesh, 8 azimuths, 1 elevation, 64px."""
    root = tmp_path_factory.mktemp("tiny_ds")
    entries = [{"id": "car0007", "kind": "car-like", "seed": 7}]
    spec = ViewSpec(elevations=(0,), azimuth_step=40, n_azimuths=8, image_size=64)
    generate_dataset(entries, spec, root, seed=0)
    return root


@pytest.fixture(scope="session")
def tiny_data(tiny_dataset):
    return PairDataset(tiny_dataset)


@pytest.fixture(scope="session")
def geo_dataset(tmp_path_factory):
    """Geometry-check dataset: 2 meshes, 2 elevations, step-40 azimuths."""
    root = tmp_path_factory.mktemp("geo_ds")
    entries = [
        {"id": "car0005", "kind": "car-like", "seed": 5},
        {"id": "chair0011", "kind": "chair-like", "seed": 11},
    ]
    spec = ViewSpec(elevations=(0, 20), azimuth_step=40, image_size=64)
    generate_dataset(entries, spec, root, seed=1)
    return root


@pytest.fixture(scope="session")
def geo_data(geo_dataset):
    return PairDataset(geo_dataset)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
