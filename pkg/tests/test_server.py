import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from semforge.executor import Engine
from semforge.gateway import Gateway, MockProvider, load_mock_rules
from semforge.server import Workspace, create_app

from tests.conftest import FIXTURES

MEDICAL_YAML = (FIXTURES / "medical" / "pipeline.yaml").read_text()
TRANSCRIPTS = (FIXTURES / "medical" / "transcripts.json").read_text()


@pytest.fixture
def workspace(tmp_path):
    rules = load_mock_rules(FIXTURES / "medical" / "mock_rules.yaml")
    engine = Engine(Gateway(MockProvider(rules)), cache_dir=tmp_path / "cache",
                    max_parallel=4)
    return Workspace(tmp_path / "ws", engine)


@pytest.fixture
def client(workspace):
    return TestClient(create_app(workspace))


def setup_pipeline(client, dataset_content=TRANSCRIPTS):
    r = client.post("/datasets", json={"id": "transcripts", "content": dataset_content,
                                       "format": "json"})
    assert r.status_code == 201, r.text
    r = client.put("/pipelines/medical", json={"yaml": MEDICAL_YAML})
    assert r.status_code == 200, r.text
    assert r.json()["diagnostics"] == []


def run_to_completion(client, body=None):
    r = client.post("/pipelines/medical/runs", json=body or {})
    assert r.status_code == 201, r.text
    run_id = r.json()["run_id"]
    events = stream_events(client, run_id)
    assert events[-1]["kind"] == "run_done"
    return run_id, events


def stream_events(client, run_id, cursor=None):
    url = f"/runs/{run_id}/events"
    if cursor is not None:
        url += f"?cursor={cursor}"
    events = []
    with client.stream("GET", url) as resp:
        assert resp.status_code == 200
        for line in resp.iter_lines():
            if line:
                events.append(json.loads(line))
    return events


class TestDatasets:
    def test_ingest_87_transcripts(self, client):
        docs = json.loads(TRANSCRIPTS)
        big = [dict(d, id=f"{d['id']}-{k}") for k in range(9) for d in docs][:87]
        r = client.post("/datasets", json={"id": "big", "content": json.dumps(big)})
        assert r.status_code == 201
        assert r.json()["doc_count"] == 87

    def test_empty_array_rejected(self, client):
        r = client.post("/datasets", json={"id": "x", "content": "[]"})
        assert r.status_code == 400
        assert "nonempty" in r.json()["detail"]["message"]

    def test_jsonl_bad_line_named(self, client):
        r = client.post("/datasets", json={"id": "x", "format": "jsonl",
                                           "content": '{"a": 1}\nbroken\n'})
        assert r.status_code == 400
        assert r.json()["detail"]["line"] == 2

    def test_get_dataset_stats(self, client):
        setup_pipeline(client)
        r = client.get("/datasets/transcripts")
        assert r.status_code == 200
        body = r.json()
        assert body["doc_count"] == 10
        assert "src" in body["attributes"]

    def test_unknown_dataset_404(self, client):
        assert client.get("/datasets/nope").status_code == 404


class TestRuns:
    def test_run_and_event_stream(self, client):
        setup_pipeline(client)
        run_id, events = run_to_completion(client)
        kinds = [e["kind"] for e in events]
        assert "op_started" in kinds
        assert kinds.count("run_done") == 1
        assert kinds[-1] == "run_done"
        seqs = [e["seq"] for e in events]
        assert seqs == list(range(len(seqs)))
        r = client.get(f"/runs/{run_id}")
        assert r.json()["status"] == "done"
        assert "10 in → 10 out, 1.00×" in r.json()["ops"]["extract_discomfort"]["selectivity"]

    def test_judge_verdict_rides_stream(self, client):
        setup_pipeline(client)
        _, events = run_to_completion(client)
        verdicts = [e for e in events if e["kind"] == "judge_verdict"]
        assert len(verdicts) == 1
        payload = verdicts[0]["payload"]
        assert payload["pass"] is False  # fixture judge fails the monolithic map
        assert payload["reasons"]
        assert payload["suggestions"][0]["tag"] == "decompose"
        assert len(payload["sampled_row_ids"]) == 5

    def test_cursor_resume(self, client):
        setup_pipeline(client)
        run_id, events = run_to_completion(client)
        k = events[2]["seq"]
        tail = stream_events(client, run_id, cursor=k)
        assert tail[0]["seq"] == k + 1
        assert [e["seq"] for e in tail] == [e["seq"] for e in events[3:]]

    def test_two_simultaneous_subscribers_identical(self, client):
        setup_pipeline(client)
        r = client.post("/pipelines/medical/runs", json={})
        run_id = r.json()["run_id"]
        results = [None, None]

        def subscribe(i):
            results[i] = stream_events(client, run_id)

        threads = [threading.Thread(target=subscribe, args=(i,)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        assert results[0] is not None and results[1] is not None
        strip = lambda evs: [{k: v for k, v in e.items() if k != "timestamp"} for e in evs]
        assert strip(results[0]) == strip(results[1])

    def test_websocket_same_frames(self, client):
        setup_pipeline(client)
        run_id, events = run_to_completion(client)
        ws_events = []
        with client.websocket_connect(f"/runs/{run_id}/ws") as ws:
            while True:
                try:
                    ws_events.append(json.loads(ws.receive_text()))
                except Exception:
                    break
                if ws_events and ws_events[-1]["kind"] == "run_done":
                    break
        assert [e["seq"] for e in ws_events] == [e["seq"] for e in events]

    def test_sample_run(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client, {"sample": {"limit": 3}})
        r = client.get(f"/runs/{run_id}")
        assert r.json()["ops"]["extract_discomfort"]["in"] == 3

    def test_invalid_pipeline_400(self, client):
        setup_pipeline(client)
        bad = MEDICAL_YAML.replace("input.src", "input.gone")
        r = client.put("/pipelines/medical", json={"yaml": bad})
        assert r.json()["diagnostics"]
        r = client.post("/pipelines/medical/runs", json={})
        assert r.status_code == 400

    def test_unknown_run_404(self, client):
        assert client.get("/runs/nope/events").status_code == 404


class TestOutputs:
    def test_search_back_pain(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        r = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs",
                       params={"search": "back pain"})
        rows = r.json()["rows"]
        assert rows
        for row in rows:
            text = json.dumps(row).lower()
            assert "back pain" in text

    def test_sort_stable_and_kind_aware(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        r = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs",
                       params={"sort": "discomfort_level"})
        rows = r.json()["rows"]
        levels = [row["discomfort_level"] for row in rows]
        assert levels == sorted(levels)
        # stability: equal keys preserve original relative order
        ids_within = [row["id"] for row in rows if row["discomfort_level"] == "medium"]
        r_unsorted = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs")
        original = [row["id"] for row in r_unsorted.json()["rows"]
                    if row["discomfort_level"] == "medium"]
        assert ids_within == original

    def test_unknown_sort_column_400(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        r = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs",
                       params={"sort": "nope"})
        assert r.status_code == 400

    def test_filter_plus_viz_reflect_filtered_rows(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        r = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs",
                       params={"filter_attr": "discomfort_level", "filter_value": "high",
                               "filter_mode": "equals"})
        body = r.json()
        n = body["total"]
        assert n >= 1
        viz = {v["column"]: v for v in body["viz"]}
        level_viz = viz["discomfort_level"]
        assert sum(b["count"] for b in level_viz["bins"]) + level_viz["overflow_count"] == n

    def test_prompts_on_demand(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        r = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs",
                       params={"with_prompts": "true", "page_size": 2})
        body = r.json()
        assert len(body["prompts"]) == 2
        assert body["prompts"][0].startswith("Extract discomfort information")
        assert "Doctor:" in body["prompts"][0]

    def test_pagination(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        r = client.get(f"/runs/{run_id}/ops/extract_discomfort/outputs",
                       params={"page": 2, "page_size": 4})
        body = r.json()
        assert body["total"] == 10
        assert len(body["rows"]) == 4
        assert body["rows"][0]["id"] == "t05"

    def test_unknown_op_404(self, client):
        setup_pipeline(client)
        run_id, _ = run_to_completion(client)
        assert client.get(f"/runs/{run_id}/ops/nope/outputs").status_code == 404


class TestNotes:
    def test_crud_and_orphan_flag(self, client):
        setup_pipeline(client)
        r = client.post("/notes", json={
            "operation_id": "extract_discomfort", "attribute": "discomfort_level",
            "comment": "the discomfort level should be about how comfortable, "
                       "behaviorally, the patient is", "tag": "red", "row_ref": "t01"})
        assert r.status_code == 201
        note = r.json()
        r = client.get("/notes", params={"q": "behaviorally"})
        found = r.json()["notes"]
        assert [n["id"] for n in found] == [note["id"]]
        assert found[0]["orphaned"] is False
        r = client.post("/notes", json={"operation_id": "deleted_op", "attribute": "x",
                                        "comment": "orphan me"})
        r = client.get("/notes", params={"operation_id": "deleted_op"})
        assert r.json()["notes"][0]["orphaned"] is True
        r = client.delete(f"/notes/{note['id']}")
        assert r.status_code == 200
        assert client.get("/notes", params={"q": "behaviorally"}).json()["notes"] == []

    def test_empty_comment_400(self, client):
        r = client.post("/notes", json={"operation_id": "x", "attribute": "y",
                                        "comment": ""})
        assert r.status_code == 400


class TestRefinement:
    def test_full_refine_flow(self, client):
        setup_pipeline(client)
        run_to_completion(client)
        client.post("/notes", json={
            "operation_id": "extract_discomfort", "attribute": "discomfort_level",
            "comment": "should be about behavioral comfort", "tag": "red",
            "row_ref": "t01"})
        r = client.post("/pipelines/medical/ops/extract_discomfort/refine", json={})
        assert r.status_code == 201, r.text
        session = r.json()
        assert len(session["tree"]) == 2
        suggestion = session["tree"][1]
        assert "behavioral" in suggestion["prompt"]
        assert suggestion["diff"]  # line diff against the root

        r = client.post(f"/refine/{session['session_id']}/feedback",
                        json={"feedback": "also mention hesitation"})
        assert r.status_code == 200
        assert len(r.json()["tree"]) == 3

        r = client.post(f"/refine/{session['session_id']}/edit",
                        json={"prompt": "manual {{ input.src }}"})
        node = r.json()["node"]
        assert node["origin"] == "manual_edit"

        r = client.post(f"/refine/{session['session_id']}/checkout",
                        json={"node_id": session["tree"][0]["id"]})
        assert r.json()["active_node"] == session["tree"][0]["id"]

        r = client.post(f"/refine/{session['session_id']}/accept",
                        json={"node_id": suggestion["id"]})
        assert r.status_code == 200
        body = r.json()
        assert body["recompute_from"] == 0
        new_prompt = body["pipeline"]["ops"][0]["prompt"]
        assert "behavioral" in new_prompt

        r = client.get("/pipelines/medical")
        assert "behavioral" in r.json()["pipeline"]["ops"][0]["prompt"]

    def test_refine_non_semantic_op_400(self, client):
        setup_pipeline(client)
        yaml_text = MEDICAL_YAML + (
            "  - name: explode\n    type: unnest\n    attribute: symptoms\n")
        client.put("/pipelines/medical", json={"yaml": yaml_text})
        r = client.post("/pipelines/medical/ops/explode/refine", json={})
        assert r.status_code == 400

    def test_tree_endpoint(self, client):
        setup_pipeline(client)
        r = client.post("/pipelines/medical/ops/extract_discomfort/refine", json={})
        sid = r.json()["session_id"]
        r = client.get(f"/refine/{sid}/tree")
        assert len(r.json()["tree"]) == 2


class TestDecompose:
    def test_full_decompose_flow(self, client):
        setup_pipeline(client)
        r = client.post("/pipelines/medical/ops/extract_discomfort/decompose", json={})
        assert r.status_code == 202
        body = r.json()
        events = stream_events(client, body["events_run_id"])
        kinds = [e["kind"] for e in events]
        assert "optimize_log" in kinds
        assert "optimize_done" in kinds
        done = next(e for e in events if e["kind"] == "optimize_done")
        assert done["payload"]["winner"]["directive"] == "chunk_map_unify"

        r = client.get(f"/optimize/{body['optimize_id']}")
        assert r.json()["status"] == "done"
        diff = r.json()["diff"]
        assert sum(1 for e in diff if e["status"] == "removed") == 1
        assert sum(1 for e in diff if e["status"] == "added") == 3

        r = client.post("/pipelines/medical/accept-plan",
                        json={"optimize_id": body["optimize_id"]})
        assert r.status_code == 200
        ops = r.json()["pipeline"]["ops"]
        assert [op["kind"] for op in ops] == ["split", "map", "reduce"]
        assert r.json()["recompute_from"] == 0

    def test_unknown_op_404(self, client):
        setup_pipeline(client)
        r = client.post("/pipelines/medical/ops/nope/decompose", json={})
        assert r.status_code == 404


class TestAssistantChat:
    def test_chat_with_pipeline_context(self, client):
        setup_pipeline(client)
        r = client.post("/assistant/chat",
                        json={"pipeline_id": "medical",
                              "message": "how do I loop over grouped documents?"})
        assert r.status_code == 200
        assert "inputs" in r.json()["reply"]


class TestPersistence:
    def test_workspace_reload(self, tmp_path, workspace):
        client = TestClient(create_app(workspace))
        setup_pipeline(client)
        client.post("/notes", json={"operation_id": "extract_discomfort",
                                    "attribute": "a", "comment": "persisted note"})
        ws2 = Workspace(workspace.root, workspace.engine)
        client2 = TestClient(create_app(ws2))
        assert client2.get("/pipelines/medical").status_code == 200
        assert client2.get("/datasets/transcripts").json()["doc_count"] == 10
        notes = client2.get("/notes").json()["notes"]
        assert notes and notes[0]["comment"] == "persisted note"
