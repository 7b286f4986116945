import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from navmem.embedder import CachingEmbedder, HashedNgramEmbedder, RemoteEmbedder
from navmem.errors import DimensionMismatch, EmptyText, ProviderUnavailable


@pytest.fixture(scope="module")
def embedder():
    return HashedNgramEmbedder(dim=64, buckets=1024, seed=0)


class TestHashedNgram:
    def test_deterministic_bytes(self, embedder):
        a = embedder.embed("a")
        b = embedder.embed("a")
        assert a.tobytes() == b.tobytes()

    def test_unit_norm_on_many_strings(self, embedder):
        rng = np.random.default_rng(42)
        letters = "abcdefghijklmnopqrstuvwxyz 0123456789"
        for _ in range(1000):
            length = int(rng.integers(1, 40))
            s = "".join(rng.choice(list(letters), size=length))
            if not s.strip():
                continue
            v = embedder.embed(s)
            assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    @settings(max_examples=200, deadline=None)
    @given(st.text(min_size=1, max_size=60))
    def test_unit_norm_property(self, text):
        e = HashedNgramEmbedder(dim=32, buckets=512, seed=3)
        if not text.strip():
            with pytest.raises(EmptyText):
                e.embed(text)
        else:
            v = e.embed(text)
            assert v.shape == (32,)
            assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_overlap_raises_similarity(self, embedder):
        anchor = embedder.embed("red door")
        near = embedder.embed("red door near stairs")
        far = embedder.embed("blue vending machine")
        assert float(anchor @ near) > float(anchor @ far)

    def test_whitespace_insensitive(self, embedder):
        assert (
            embedder.embed("red  door").tobytes()
            == embedder.embed(" red door ").tobytes()
        )

    def test_empty_text_rejected(self, embedder):
        with pytest.raises(EmptyText):
            embedder.embed("   ")

    def test_batch_equals_singleton_calls(self, embedder):
        texts = ["a red door", "a blue bench", "water fountain"]
        batch = embedder.embed_batch(texts)
        singles = [embedder.embed(t) for t in texts]
        assert len(batch) == 3
        for got, want in zip(batch, singles):
            assert got.tobytes() == want.tobytes()

    def test_batch_of_one(self, embedder):
        assert embedder.embed_batch(["x"])[0].tobytes() == embedder.embed("x").tobytes()

    def test_batch_aborts_on_any_empty(self, embedder):
        with pytest.raises(EmptyText):
            embedder.embed_batch(["fine", "  ", "also fine"])

    def test_seed_changes_vectors(self):
        a = HashedNgramEmbedder(dim=32, seed=0).embed("corridor")
        b = HashedNgramEmbedder(dim=32, seed=1).embed("corridor")
        assert a.tobytes() != b.tobytes()

    def test_name_encodes_configuration(self):
        e = HashedNgramEmbedder(dim=128, buckets=2048, seed=9)
        assert "128" in e.name and "2048" in e.name and "9" in e.name


class TestCachingEmbedder:
    def test_transparent_and_isolated(self, embedder):
        cached = CachingEmbedder(embedder)
        v1 = cached.embed("silver machine")
        v2 = cached.embed("silver machine")
        assert v1.tobytes() == embedder.embed("silver machine").tobytes()
        v1[0] = 123.0  # mutating a returned vector must not poison the cache
        assert v2.tobytes() == embedder.embed("silver machine").tobytes()
        assert cached.name == embedder.name


# ---------------------------------------------------------------------------
# Remote client against a local fake service


class _FakeEmbeddingHandler(BaseHTTPRequestHandler):
    failures_left = 0
    dim = 16

    def do_POST(self):
        cls = type(self)
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if cls.failures_left > 0:
            cls.failures_left -= 1
            self.send_response(503)
            self.end_headers()
            return
        data = []
        for i, text in enumerate(body["input"]):
            rng = np.random.default_rng(abs(hash(text)) % (2**32))
            vec = rng.standard_normal(cls.dim)
            data.append({"index": i, "embedding": vec.tolist()})
        payload = json.dumps({"data": data}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def fake_service():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _FakeEmbeddingHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _FakeEmbeddingHandler.failures_left = 0
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/embeddings"
    server.shutdown()


class TestRemoteEmbedder:
    def make(self, url, **kwargs):
        defaults = dict(model="test-embed", dim=16, max_retries=2, backoff=0.01)
        defaults.update(kwargs)
        return RemoteEmbedder(url, **defaults)

    def test_returns_unit_vectors(self, fake_service):
        client = self.make(fake_service)
        v = client.embed("a red door")
        assert v.shape == (16,)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-9

    def test_large_batch_preserves_order(self, fake_service):
        client = self.make(fake_service)
        texts = [f"caption number {i}" for i in range(256)]
        batch = client.embed_batch(texts)
        singles = [client.embed(t) for t in texts]
        assert len(batch) == 256
        for got, want in zip(batch, singles):
            assert np.allclose(got, want)

    def test_retries_transient_failures(self, fake_service):
        _FakeEmbeddingHandler.failures_left = 2
        client = self.make(fake_service)
        v = client.embed("eventually works")
        assert v.shape == (16,)

    def test_gives_up_after_retries(self, fake_service):
        _FakeEmbeddingHandler.failures_left = 50
        client = self.make(fake_service)
        with pytest.raises(ProviderUnavailable):
            client.embed("never works")

    def test_unreachable_host(self):
        client = self.make("http://127.0.0.1:1/nope", timeout=0.2)
        with pytest.raises(ProviderUnavailable):
            client.embed("anything")

    def test_dim_mismatch_detected(self, fake_service):
        client = self.make(fake_service, dim=99)
        with pytest.raises(DimensionMismatch):
            client.embed("wrong dim")
