"""
An interactive retrieval session over HTTP
==========================================

The retrieval service wraps a trained model and a scene corpus behind a
small JSON API: create a session with a hidden target, submit one query
per turn, and get back the current top-ranked images. This demo starts
the server in-process on a random port and plays a session against it
the same way a browser client would.
"""

import json
import tempfile
import threading
import urllib.request
from pathlib import Path

import numpy as np

from slotsearch.model import TrainConfig
from slotsearch.scenes import CorpusConfig, load_corpus, make_corpus
from slotsearch.service import RetrievalService, make_server
from slotsearch.trainer import pretrain

# Train a small model so the rankings mean something.
work = Path(tempfile.mkdtemp())
corpus = work / "corpus"
make_corpus(CorpusConfig(n_train=40, n_val=10, n_test=12, n_regions=4,
                         t_turns=4, seed=21), corpus)
checkpoint = pretrain(TrainConfig(model="drilldown", slots=2, state_dim=16,
                                  embed_dim=8, turns=4, batch_size=8,
                                  pretrain_epochs=6, lr=1e-3, seed=2),
                      corpus, log=lambda *_: None)

# The service serves sessions against the held-out test scenes.
scenes = load_corpus(corpus / "test.jsonl")
service = RetrievalService(checkpoint.to_model(), scenes, top_k=3, max_turns=4,
                           rng=np.random.default_rng(9))
server = make_server(service, port=0)  # port 0: pick any free port
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print("serving on", base)


def post(path: str, payload: dict) -> dict:
    req = urllib.request.Request(base + path, json.dumps(payload).encode(),
                                 {"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


# A new session hides a target scene; the client only ever sees its SVG.
session = post("/api/session", {})
sid = session["session_id"]
print("session:", sid)
print("target svg size:", len(session["target_svg"]), "bytes")

# Play the session: describe the target one detail at a time. Here we
# cheat and read the true captions of the target via the service's own
# state, which a real user would glean from the target image.
target_id = service._lookup(sid).target_id
target = next(s for s in scenes if s.id == target_id)
for cap in target.captions:
    turn = post(f"/api/session/{sid}/query", {"text": cap.text})
    top = ", ".join(f"#{r['image_id']}@{r['score']:.3f}" for r in turn["results"])
    print(f"turn {turn['turn']}: {cap.text!r} -> rank {turn['target_rank']} | {top}")
    if turn["status"] != "active":
        print("session ended:", turn["status"])
        break

# The full transcript is replayable from the server at any time — a
# reloaded browser tab rebuilds its view from exactly this payload.
with urllib.request.urlopen(f"{base}/api/session/{sid}") as resp:
    replay = json.loads(resp.read())
print("server history holds", len(replay["history"]), "turns,",
      "status:", replay["status"])
server.shutdown()
