import numpy as np
import pytest

cv2 = pytest.importorskip("cv2")


def _checkerboard(h=240, w=320, cell=20):
    ys, xs = np.mgrid[0:h, 0:w]
    board = (((ys // cell) + (xs // cell)) % 2 * 255).astype(np.uint8)
    return cv2.cvtColor(board, cv2.COLOR_GRAY2BGR)


def _blobs(h=240, w=320, seed=0):
    rng = np.random.default_rng(seed)
    img = np.full((h, w, 3), 40, dtype=np.uint8)
    for _ in range(40):
        c = (int(rng.integers(0, w)), int(rng.integers(0, h)))
        r = int(rng.integers(5, 30))
        color = tuple(int(v) for v in rng.integers(0, 256, size=3))
        cv2.circle(img, c, r, color, -1)
    return img


def _noise(h=240, w=320, seed=1):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
    return cv2.GaussianBlur(img, (5, 5), 0)


def _gradient_rects(h=240, w=320):
    xs = np.linspace(0, 255, w, dtype=np.uint8)
    img = cv2.cvtColor(np.tile(xs, (h, 1)), cv2.COLOR_GRAY2BGR)
    for i in range(6):
        cv2.rectangle(img, (20 + 45 * i, 40), (50 + 45 * i, 200),
                      (255 - 40 * i, 40 * i, 128), -1)
    return img


@pytest.fixture(scope="session")
def uniform_gray_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("imgs") / "gray.png"
    cv2.imwrite(str(p), np.full((200, 200, 3), 128, dtype=np.uint8))
    return str(p)


@pytest.fixture(scope="session")
def checkerboard_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("imgs") / "checker.png"
    cv2.imwrite(str(p), _checkerboard())
    return str(p)


@pytest.fixture(scope="session")
def sample_paths(tmp_path_factory):
    """Five varied images: four textured references and one textured query."""
    d = tmp_path_factory.mktemp("sample")
    imgs = {
        "ref_a": _blobs(seed=0),
        "ref_b": _blobs(seed=7),
        "ref_c": _noise(seed=1),
        "ref_d": _gradient_rects(),
        "query": _blobs(seed=3),
    }
    paths = []
    for name, img in imgs.items():
        p = d / f"{name}.png"
        cv2.imwrite(str(p), img)
        paths.append(str(p))
    return paths
