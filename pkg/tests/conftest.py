import numpy as np
import pytest
from hypothesis import strategies as st

from icdetraj.prob import DiscretePdf, Grid


def random_pdf(rng, grid=Grid(), sparsity=0.0):
    w = rng.dirichlet(np.ones(grid.num_bins))
    if sparsity:
        w[rng.random(grid.num_bins) < sparsity] = 0.0
        if w.sum() == 0:
            w[0] = 1.0
    return DiscretePdf.from_weights(grid, w)


@st.composite
def pdfs(draw, num_digits=2, allow_zeros=True):
    grid = Grid(num_digits)
    seed = draw(st.integers(0, 2**32 - 1))
    sparsity = draw(st.sampled_from([0.0, 0.5, 0.9])) if allow_zeros else 0.0
    return random_pdf(np.random.default_rng(seed), grid, sparsity)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid():
    return Grid(2)


class _DigitHandler:
    """Request handler factory for a local provider speaking the JSON wire protocol."""

    @staticmethod
    def make(answer):
        import json
        from http.server import BaseHTTPRequestHandler

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                if self.path == "/error":
                    self.send_response(500)
                    self.end_headers()
                    return
                probs = [float(v) for v in answer(body["context"])]
                if self.path == "/arity":
                    probs = probs[:9]
                out = json.dumps({"digit_probs": probs}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *args):
                pass

        return Handler


@pytest.fixture
def digit_server():
    """Local HTTP provider backed by the seeded-random mock; yields its base URL."""
    import threading
    from http.server import ThreadingHTTPServer

    from icdetraj.probe import SeededRandomMock

    mock = SeededRandomMock(5)
    server = ThreadingHTTPServer(("127.0.0.1", 0), _DigitHandler.make(mock._answer))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()
