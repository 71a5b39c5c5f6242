import io
import threading

import numpy as np
import pytest
import requests
from PIL import Image as PilImage

from boxsieve.imgio import ImageStack, read_label_csv
from boxsieve.server import LabelStore, make_server, render_png


@pytest.fixture()
def served(tmp_path):
    rng = np.random.default_rng(0)
    stack = ImageStack(data=rng.normal(size=(5, 16, 16)).astype(np.float32))
    store = LabelStore(str(tmp_path / "labels.csv"), n_images=len(stack))
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<html><body>labeler</body></html>")
    server = make_server(stack, store, port=0, static_dir=str(static))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, store, tmp_path / "labels.csv"
    server.shutdown()
    server.server_close()


class TestApi:
    def test_stack_summary(self, served):
        base, _, _ = served
        r = requests.get(f"{base}/api/stack")
        assert r.status_code == 200
        assert r.json() == {
            "count": 5,
            "width": 16,
            "height": 16,
            "labeled": 0,
            "unlabeled": 5,
        }

    def test_images_listing_and_filter(self, served):
        base, _, _ = served
        requests.post(f"{base}/api/label", json={"id": 1, "label": "+"})
        rows = requests.get(f"{base}/api/images?status=unlabeled").json()
        assert [r["id"] for r in rows] == [0, 2, 3, 4]
        rows = requests.get(f"{base}/api/images?status=labeled").json()
        assert rows == [{"id": 1, "label": "+"}]
        rows = requests.get(f"{base}/api/images?status=unlabeled&offset=1&limit=2").json()
        assert [r["id"] for r in rows] == [2, 3]

    def test_png_render(self, served):
        base, _, _ = served
        r = requests.get(f"{base}/api/image/2.png")
        assert r.status_code == 200
        assert r.headers["Content-Type"] == "image/png"
        img = PilImage.open(io.BytesIO(r.content))
        assert img.size == (16, 16)
        assert img.mode == "L"

    def test_png_unknown_id(self, served):
        base, _, _ = served
        assert requests.get(f"{base}/api/image/99.png").status_code == 404

    def test_label_roundtrip_and_idempotence(self, served):
        base, store, csv_path = served
        assert requests.post(f"{base}/api/label", json={"id": 3, "label": "-"}).json() == {
            "ok": True
        }
        assert store.label_of(3) == -1
        # Last write wins.
        requests.post(f"{base}/api/label", json={"id": 3, "label": "+"})
        assert store.label_of(3) == 1
        # Unlabeling removes the row.
        requests.post(f"{base}/api/label", json={"id": 3, "label": "unlabeled"})
        assert store.label_of(3) == 0
        assert read_label_csv(csv_path).labels == {}

    def test_label_persisted_to_csv(self, served):
        base, _, csv_path = served
        requests.post(f"{base}/api/label", json={"id": 0, "label": "+"})
        requests.post(f"{base}/api/label", json={"id": 4, "label": "-"})
        table = read_label_csv(csv_path)
        assert table.labels == {0: 1, 4: -1}

    def test_bad_label_rejected(self, served):
        base, _, _ = served
        r = requests.post(f"{base}/api/label", json={"id": 0, "label": "maybe"})
        assert r.status_code == 400
        r = requests.post(f"{base}/api/label", json={"id": 50, "label": "+"})
        assert r.status_code == 400

    def test_export_csv(self, served):
        base, _, _ = served
        requests.post(f"{base}/api/label", json={"id": 2, "label": "+"})
        requests.post(f"{base}/api/label", json={"id": 0, "label": "-"})
        r = requests.get(f"{base}/api/export?format=csv")
        assert r.status_code == 200
        assert r.text == "id,label\n0,-\n2,+\n"

    def test_static_serving(self, served):
        base, _, _ = served
        r = requests.get(f"{base}/")
        assert r.status_code == 200
        assert "labeler" in r.text
        assert requests.get(f"{base}/../etc/passwd").status_code in (400, 404)

    def test_concurrent_labeling(self, served):
        base, store, _ = served

        def label(i):
            requests.post(f"{base}/api/label", json={"id": i, "label": "+"})

        threads = [threading.Thread(target=label, args=(i,)) for i in range(5)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert store.counts() == (5, 0)


class TestRenderPng:
    def test_constant_image(self):
        png = render_png(np.zeros((8, 8)))
        img = PilImage.open(io.BytesIO(png))
        assert img.size == (8, 8)
        assert np.asarray(img).max() == 0

    def test_minmax_stretch(self):
        img = np.array([[0.0, 0.5], [0.25, 1.0]])
        arr = np.asarray(PilImage.open(io.BytesIO(render_png(img))))
        assert arr[0, 0] == 0
        assert arr[1, 1] == 255
        assert arr[0, 1] == 128  # 0.5 -> round(127.5)

    def test_store_requires_valid_id(self, tmp_path):
        store = LabelStore(str(tmp_path / "l.csv"), n_images=3)
        with pytest.raises(ValueError):
            store.set_label(7, 1)
