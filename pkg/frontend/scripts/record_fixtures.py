"""Record real API responses into frontend/fixtures/.

Plays short scripted sessions against the service (in-process, no
sockets) and saves every response verbatim. Re-run after any API change:

    python3 frontend/scripts/record_fixtures.py
"""

import json
import tempfile
import time
from pathlib import Path

from fastapi.testclient import TestClient

from s2p import memory
from s2p.core import Setup
from s2p.harness import SuiteSpec
from s2p.service import create_app, start_demo, start_run

OUT = Path(__file__).resolve().parent.parent / "fixtures"


def save(name: str, payload) -> None:
    OUT.joinpath(name).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"  {name}")


def main() -> None:
    OUT.mkdir(exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix="fixtures-"))
    store = memory.init_store(tmp / "mem", memory.make_embedder("hist96"))
    app = create_app()
    client = TestClient(app)

    # demonstration recording, first person
    start_demo(app, Setup.FPV, store, seed=0)
    save("state_fpv.json", client.get("/state").json())
    step = client.post("/demo/step",
                       json={"action": 3, "explanation": "peek left"})
    save("demo_step.json", step.json())
    bad = client.post("/demo/step",
                      json={"action": 42, "explanation": "nope"})
    assert bad.status_code == 422
    save("error_unknown_label.json", bad.json())
    client.post("/demo/step",
                json={"action": 7, "explanation": "and back right"})
    save("demo_finish.json",
         client.post("/demo/finish", json={"target_object": "tv"}).json())

    # demonstration recording, top view (keypoint hotspots)
    start_demo(app, Setup.TPV, store, seed=0)
    save("state_tpv.json", client.get("/state").json())
    app.state.demo = None

    # live run telemetry: catch it mid-flight, then abort
    run = start_run(app, SuiteSpec(setup=Setup.TPV, backend="oracle",
                                   n_episodes=40, seeds=(0,)))
    doc = {}
    for _ in range(400):
        doc = client.get("/run/status").json()
        if doc.get("plan") and doc["active"]:
            break
        time.sleep(0.02)
    assert doc.get("plan"), "never caught the run mid-flight"
    save("run_status_active.json", doc)
    save("run_abort.json", client.post("/run/abort").json())
    run.thread.join(timeout=30)

    # a short run allowed to finish, for the terminal state
    run = start_run(app, SuiteSpec(setup=Setup.TPV, backend="oracle",
                                   n_episodes=2, seeds=(0,)))
    run.thread.join(timeout=60)
    save("run_status_done.json", client.get("/run/status").json())


if __name__ == "__main__":
    main()
