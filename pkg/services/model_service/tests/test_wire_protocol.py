from __future__ import annotations

import base64
import io
import json
import time
import urllib.error
import urllib.request

import numpy as np
import pytest
from PIL import Image

from ovseg_model_service.backends import ToyBackend, make_backend
from ovseg_model_service.service import start_server


@pytest.fixture(scope="module")
def service():
    server = start_server(lambda: ToyBackend(dim=32), port=0)
    base = f"http://127.0.0.1:{server.server_address[1]}"
    deadline = time.time() + 10
    while time.time() < deadline:
        try:
            get(base + "/info")
            break
        except urllib.error.HTTPError:
            time.sleep(0.05)
    yield base
    server.shutdown()


def get(url):
    with urllib.request.urlopen(url, timeout=10) as resp:
        return json.loads(resp.read())


def post(url, payload, raw=None):
    data = raw if raw is not None else json.dumps(payload).encode()
    req = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}, method="POST"
    )
    with urllib.request.urlopen(req, timeout=10) as resp:
        return resp.status, json.loads(resp.read()), dict(resp.headers)


def png_b64(rgb: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(rgb.astype(np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def solid(color, h=24, w=24):
    return np.tile(np.asarray(color, np.uint8), (h, w, 1))


def test_info_schema(service):
    info = get(service + "/info")
    assert {"dim", "image_model", "text_model"} <= set(info)
    assert info["dim"] == 32


def test_embed_image_schema_norm_determinism(service):
    img = png_b64(solid((200, 30, 30)))
    status, body, _ = post(service + "/embed_image", {"image": img})
    assert status == 200
    emb = np.asarray(body["embedding"])
    assert len(emb) == get(service + "/info")["dim"]
    assert abs(np.linalg.norm(emb) - 1.0) < 1e-5
    _, body2, _ = post(service + "/embed_image", {"image": img})
    assert body["embedding"] == body2["embedding"]  # bytewise-identical input


def test_embed_text_schema_norm_determinism(service):
    status, body, _ = post(service + "/embed_text", {"text": "vise"})
    assert status == 200
    emb = np.asarray(body["embedding"])
    assert abs(np.linalg.norm(emb) - 1.0) < 1e-5
    _, body2, _ = post(service + "/embed_text", {"text": "vise"})
    assert body["embedding"] == body2["embedding"]
    status, body3, _ = post(service + "/embed_text", {"text": "Schraubstock präzise"})
    assert status == 200
    assert len(body3["embedding"]) == len(emb)


def test_text_image_dims_agree(service):
    _, img_body, _ = post(service + "/embed_image", {"image": png_b64(solid((1, 2, 3)))})
    _, txt_body, _ = post(service + "/embed_text", {"text": "anything"})
    assert len(img_body["embedding"]) == len(txt_body["embedding"])


def test_segment_mask_contract(service):
    rgb = solid((200, 0, 0), 30, 40)
    rgb[:, 20:] = (0, 0, 200)
    status, body, headers = post(
        service + "/segment", {"image": png_b64(rgb), "points": [[5.0, 10.0]]}
    )
    assert status == 200
    raw = base64.b64decode(body["mask"])
    with Image.open(io.BytesIO(raw)) as img:
        arr = np.asarray(img)
    assert arr.shape == (30, 40)  # mask dimensions equal input dimensions
    assert set(np.unique(arr)) <= {0, 255}
    assert arr[10, 5] == 255  # prompt pixel inside the mask
    assert "X-Mask-Warning" not in headers


def test_segment_center_prompt_covers_solid_image(service):
    rgb = solid((90, 120, 40), 30, 30)
    _, body, _ = post(service + "/segment", {"image": png_b64(rgb), "points": [[15.0, 15.0]]})
    arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(body["mask"]))))
    assert (arr == 255).mean() >= 0.9


def expect_400(service, path, payload=None, raw=None):
    with pytest.raises(urllib.error.HTTPError) as err:
        post(service + path, payload, raw=raw)
    assert err.value.code == 400


def test_malformed_bodies_rejected(service):
    expect_400(service, "/embed_image", raw=b"{nope")
    expect_400(service, "/embed_image", {})
    expect_400(service, "/embed_image", {"image": "!!!notbase64!!!"})
    expect_400(service, "/embed_text", {})
    expect_400(service, "/embed_text", {"text": "   "})
    expect_400(service, "/segment", {"image": png_b64(solid((1, 1, 1))), "points": []})


def test_out_of_bounds_prompt_rejected(service):
    img = png_b64(solid((1, 1, 1), 20, 20))
    expect_400(service, "/segment", {"image": img, "points": [[25.0, 5.0]]})
    expect_400(service, "/segment", {"image": img, "points": [[5.0, -1.0]]})


def test_503_with_retry_after_while_loading():
    server = start_server(lambda: ToyBackend(dim=16), port=0, load_delay=1.5)
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        with pytest.raises(urllib.error.HTTPError) as err:
            get(base + "/info")
        assert err.value.code == 503
        assert err.value.headers.get("Retry-After") == "1"
        deadline = time.time() + 10
        while time.time() < deadline:
            try:
                info = get(base + "/info")
                break
            except urllib.error.HTTPError:
                time.sleep(0.1)
        assert info["dim"] == 16
    finally:
        server.shutdown()


def test_matches_in_process_synthetic_provider(service):
    # The toy profile serves exactly the pipeline's synthetic semantics.
    from ovseg.feature import HttpProvider, SyntheticProvider

    http = HttpProvider(service)
    local = SyntheticProvider(32)
    img = solid((200, 40, 40))
    np.testing.assert_allclose(http.embed_image(img), local.embed_image(img), atol=1e-12)
    np.testing.assert_allclose(http.embed_text("red"), local.embed_text("red"), atol=1e-12)
    rgb = solid((200, 0, 0), 20, 30)
    rgb[:, 15:] = (0, 0, 200)
    pts = np.array([[5.0, 10.0]])
    assert np.array_equal(http.segment(rgb, pts), local.segment(rgb, pts))


def test_pipeline_runs_against_toy_service(service, tmp_path):
    # Full integration: the pipeline consumes the service over the wire only.
    from ovseg.pipeline import cmd_features, cmd_prepare, cmd_query, load_config
    from ovseg.synthetic_scene import build_scene, write_scene

    scene = build_scene(spacing=0.03, n_views=4, width=128, height=96)
    write_scene(scene, tmp_path / "scene")
    config = {
        "manifest": str(tmp_path / "scene" / "manifest.json"),
        "cache_dir": str(tmp_path / "cache"),
        "master_seed": 3,
        "overseg": {"target_points_per_sp": 150, "lloyd_iterations": 6},
        "min_visible": 10,
        "merge": {"tau": 0.95, "rounds": 4},
        "cluster": {"epsilon": 0.08, "min_cluster_size": 5},
        "merge_provider_url": service,
        "query_provider_url": service,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    cfg = load_config(cfg_path)
    cmd_prepare(cfg)
    out = cmd_features(cfg)
    assert out["status"] == "built"
    result = cmd_query(cfg, "red", threshold=0.5)
    assert result["top_superpoints"][0]["score"] > 0.9


def test_industrial_vs_general_ordering_on_vise():
    # Ordering check with real encoders; runs only when weights are present.
    pytest.importorskip("torch")
    pytest.importorskip("open_clip")
    import os

    adapter = os.environ.get("OVSEG_INDUSTRIAL_ADAPTER")
    if not adapter:
        pytest.skip("no industrial adapter checkpoint configured")
    general = make_backend("general")
    industrial = make_backend("industrial", adapter_checkpoint=adapter)
    vise_crop = np.asarray(Image.open("tests/data/vise.png").convert("RGB"))
    t_g = general.embed_text("vise") @ general.embed_image(vise_crop)
    t_i = industrial.embed_text("vise") @ industrial.embed_image(vise_crop)
    assert t_i > t_g
