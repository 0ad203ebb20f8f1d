import http.client
import json
import threading

import numpy as np
import pytest

from confseg.dataio import cmap_from_bytes, cmap_to_bytes, write_pgm
from confseg.labels import CHANNEL_NAMES, NUM_CHANNELS, ConfidenceMap
from confseg.service import make_server


@pytest.fixture()
def service(tmp_path):
    rng = np.random.default_rng(0)
    for i, name in enumerate(["scan_a", "scan_b", "scan_c"]):
        img = rng.integers(0, 256, (8 + i, 10)).astype(np.uint8)
        write_pgm(img, tmp_path / f"{name}.pgm")
    server = make_server(tmp_path, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    yield host, port, tmp_path
    server.shutdown()
    thread.join(timeout=5)


def request(host, port, method, path, body=None):
    conn = http.client.HTTPConnection(host, port, timeout=10)
    conn.request(method, path, body=body)
    resp = conn.getresponse()
    payload = resp.read()
    conn.close()
    return resp.status, payload


def valid_cmap_bytes(width=10, height=8, fill=60):
    values = np.zeros((NUM_CHANNELS, height, width), dtype=np.uint8)
    values[2, 1:4, 2:6] = fill
    return cmap_to_bytes(ConfidenceMap(values))


class TestListingAndMeta:
    def test_list_images_sorted_with_label_flags(self, service):
        host, port, tmp = service
        status, body = request(host, port, "GET", "/api/images")
        assert status == 200
        rows = json.loads(body)
        assert [r["id"] for r in rows] == ["scan_a", "scan_b", "scan_c"]
        assert all(r["has_label"] is False for r in rows)
        assert rows[0]["width"] == 10
        assert rows[0]["height"] == 8

    def test_ordering_stable_across_calls(self, service):
        host, port, _ = service
        first = request(host, port, "GET", "/api/images")[1]
        second = request(host, port, "GET", "/api/images")[1]
        assert first == second

    def test_meta_and_raw(self, service):
        host, port, tmp = service
        status, body = request(host, port, "GET", "/api/images/scan_a/meta")
        assert status == 200
        assert json.loads(body) == {"width": 10, "height": 8}
        status, body = request(host, port, "GET", "/api/images/scan_a/raw")
        assert status == 200
        assert body == (tmp / "scan_a.pgm").read_bytes()

    def test_channels_endpoint(self, service):
        host, port, _ = service
        status, body = request(host, port, "GET", "/api/channels")
        assert status == 200
        assert json.loads(body) == list(CHANNEL_NAMES)

    def test_unknown_image_404(self, service):
        host, port, _ = service
        assert request(host, port, "GET", "/api/images/ghost/meta")[0] == 404

    def test_empty_dir_lists_nothing(self, tmp_path):
        server = make_server(tmp_path, port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            status, body = request(host, port, "GET", "/api/images")
            assert status == 200
            assert json.loads(body) == []
        finally:
            server.shutdown()


class TestLabelRoundTrip:
    def test_put_then_get_bit_exact(self, service):
        host, port, _ = service
        blob = valid_cmap_bytes()
        status, body = request(host, port, "PUT", "/api/labels/scan_a", blob)
        assert status == 200
        assert json.loads(body)["revision"] == 1
        status, got = request(host, port, "GET", "/api/labels/scan_a")
        assert status == 200
        assert got == blob

    def test_revision_strictly_increases(self, service):
        host, port, _ = service
        blob = valid_cmap_bytes()
        revs = [
            json.loads(request(host, port, "PUT", "/api/labels/scan_a", blob)[1])["revision"]
            for _ in range(3)
        ]
        assert revs == [1, 2, 3]

    def test_get_unlabeled_is_404(self, service):
        host, port, _ = service
        assert request(host, port, "GET", "/api/labels/scan_b")[0] == 404

    def test_put_value_out_of_range_422(self, service):
        host, port, _ = service
        blob = bytearray(valid_cmap_bytes())
        blob[17] = 101
        status, body = request(host, port, "PUT", "/api/labels/scan_a", bytes(blob))
        assert status == 422
        assert "out of range" in json.loads(body)["error"]

    def test_put_dimension_mismatch_422(self, service):
        host, port, _ = service
        blob = valid_cmap_bytes(width=4, height=4)
        status, body = request(host, port, "PUT", "/api/labels/scan_a", blob)
        assert status == 422
        assert "dimension mismatch" in json.loads(body)["error"]

    def test_put_unknown_id_404(self, service):
        host, port, _ = service
        assert request(host, port, "PUT", "/api/labels/ghost", valid_cmap_bytes())[0] == 404

    def test_put_garbage_422(self, service):
        host, port, _ = service
        status, body = request(host, port, "PUT", "/api/labels/scan_a", b"GARBAGE")
        assert status == 422

    def test_has_label_flag_flips(self, service):
        host, port, _ = service
        request(host, port, "PUT", "/api/labels/scan_b",
                valid_cmap_bytes(width=10, height=9))
        rows = json.loads(request(host, port, "GET", "/api/images")[1])
        flags = {r["id"]: r["has_label"] for r in rows}
        assert flags["scan_b"] is True
        assert flags["scan_c"] is False


class TestConcurrency:
    def test_concurrent_get_never_sees_torn_map(self, service):
        host, port, _ = service
        variants = [valid_cmap_bytes(fill=f) for f in (20, 40, 60, 80, 100)]
        request(host, port, "PUT", "/api/labels/scan_a", variants[0])
        stop = threading.Event()
        errors = []

        def writer(idx):
            for i in range(20):
                blob = variants[(idx + i) % len(variants)]
                status, _ = request(host, port, "PUT", "/api/labels/scan_a", blob)
                if status != 200:
                    errors.append(f"writer got {status}")

        def reader():
            while not stop.is_set():
                status, body = request(host, port, "GET", "/api/labels/scan_a")
                if status != 200:
                    errors.append(f"reader got {status}")
                    continue
                if body not in variants:
                    errors.append("torn or unknown payload")
                    continue
                cmap_from_bytes(body)  # must always parse

        readers = [threading.Thread(target=reader) for _ in range(8)]
        writers = [threading.Thread(target=writer, args=(i,)) for i in range(8)]
        for t in readers + writers:
            t.start()
        for t in writers:
            t.join()
        stop.set()
        for t in readers:
            t.join()
        assert errors == []

    def test_distinct_ids_do_not_contend(self, service):
        host, port, _ = service
        blob_a = valid_cmap_bytes(fill=20)
        blob_b = valid_cmap_bytes(width=10, height=9, fill=80)
        ok = []

        def put(path, blob):
            status, _ = request(host, port, "PUT", path, blob)
            ok.append(status)

        threads = [
            threading.Thread(target=put, args=("/api/labels/scan_a", blob_a)),
            threading.Thread(target=put, args=("/api/labels/scan_b", blob_b)),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ok == [200, 200]
        assert request(host, port, "GET", "/api/labels/scan_a")[1] == blob_a
        assert request(host, port, "GET", "/api/labels/scan_b")[1] == blob_b


class TestStaticHosting:
    def test_placeholder_without_ui(self, service):
        host, port, _ = service
        status, body = request(host, port, "GET", "/")
        assert status == 200
        assert b"confseg" in body

    def test_serves_built_ui(self, tmp_path):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>brush</body></html>")
        (ui / "app.js").write_text("console.log('x')")
        data = tmp_path / "data"
        data.mkdir()
        server = make_server(data, port=0, ui_dir=ui)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            status, body = request(host, port, "GET", "/")
            assert status == 200
            assert b"brush" in body
            status, _ = request(host, port, "GET", "/app.js")
            assert status == 200
            status, _ = request(host, port, "GET", "/../secret")
            assert status == 404
        finally:
            server.shutdown()
