import json

import pytest
from fastapi.testclient import TestClient

from fedshapley.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def scenario_payload(epochs=6, dishonest=False):
    scenario = {
        "num_clients": 4,
        "epochs": epochs,
        "fraction": 1.0,
        "beta": None,
        "data": {"kind": "synthetic", "classes": 2, "rows": 240, "features": 2,
                 "separation": 4.0},
        "train": {"local_epochs": 2, "batch_size": 16, "learning_rate": 0.4},
    }
    if dishonest:
        scenario["dishonest"] = [{"client_id": 0, "window": [3, epochs],
                                  "flip_probability": 1.0}]
    return scenario


class TestSimulateEndpoint:
    def test_returns_parseable_log(self, client):
        reply = client.post("/simulate", json={"scenario": scenario_payload(),
                                               "seed": 5})
        assert reply.status_code == 200
        body = reply.json()
        doc = json.loads(body["log_document"])
        assert doc["format"] == "fedshapley-gradient-log"
        assert len(doc["epochs"]) == 6
        assert body["manifest"]["versions"]["fedshapley"]

    def test_repeat_is_byte_identical(self, client):
        payload = {"scenario": scenario_payload(), "seed": 9}
        first = client.post("/simulate", json=payload).json()["log_document"]
        second = client.post("/simulate", json=payload).json()["log_document"]
        assert first == second

    def test_validation_error_is_client_error(self, client):
        bad = scenario_payload()
        bad["fraction"] = 0.0
        reply = client.post("/simulate", json={"scenario": bad, "seed": 0})
        assert reply.status_code == 422

    def test_bad_poison_window_rejected(self, client):
        bad = scenario_payload()
        bad["dishonest"] = [{"client_id": 0, "window": [5, 99],
                             "flip_probability": 0.5}]
        reply = client.post("/simulate", json={"scenario": bad, "seed": 0})
        assert reply.status_code == 422


class TestAssessEndpoint:
    def test_full_exact_assessment(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(),
                                                 "seed": 1}).json()["log_document"]
        reply = client.post("/assess", json={
            "log_document": log_doc,
            "assessment": {"utility": "neg_loss", "method": {"kind": "exact"}},
            "meta": {"config_hash": "deadbeef", "seed": 1},
        })
        assert reply.status_code == 200
        body = reply.json()
        assert body["status"] == "ok"
        summary = json.loads(body["summary"])
        totals = sum(summary["totals"].values())
        assert totals == pytest.approx(summary["final_utility"], abs=1e-9)
        assert summary["config_hash"] == "deadbeef"
        assert "# config_hash=deadbeef" in body["timeline_csv"]
        assert "elapsed_seconds" in body["timing"]

    def test_scheduled_assessment_reports_residual(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(),
                                                 "seed": 2}).json()["log_document"]
        reply = client.post("/assess", json={
            "log_document": log_doc,
            "assessment": {"utility": "neg_loss", "method": {"kind": "exact"},
                           "schedule": {"solver": "one_sided", "k": 3}},
        })
        body = reply.json()
        summary = json.loads(body["summary"])
        assert len(summary["computed_epochs"]) == 3
        assert summary["residual"] != 0.0

    def test_monte_carlo_method(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(epochs=3),
                                                 "seed": 3}).json()["log_document"]
        reply = client.post("/assess", json={
            "log_document": log_doc,
            "assessment": {"utility": "neg_loss",
                           "method": {"kind": "monte_carlo", "samples": 50, "seed": 4}},
        })
        assert reply.status_code == 200
        assert json.loads(reply.json()["summary"])["completed"] is True

    def test_unregistered_plugin_is_client_error(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(epochs=2),
                                                 "seed": 3}).json()["log_document"]
        reply = client.post("/assess", json={
            "log_document": log_doc,
            "assessment": {"utility": "neg_loss",
                           "method": {"kind": "plugin", "name": "complementary",
                                      "samples": 10}},
        })
        assert reply.status_code == 400
        assert "plug-in" in reply.json()["detail"]

    def test_corrupt_log_is_client_error(self, client):
        reply = client.post("/assess", json={
            "log_document": json.dumps({"format": "nope"}),
            "assessment": {"utility": "neg_loss", "method": {"kind": "exact"}},
        })
        assert reply.status_code == 400


class TestScheduleEndpoint:
    def test_schedule_document(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(),
                                                 "seed": 4}).json()["log_document"]
        reply = client.post("/schedule", json={
            "log_document": log_doc, "utility": "neg_loss",
            "options": {"solver": "two_sided_exact", "k": 3, "gamma": 0.5},
        })
        assert reply.status_code == 200
        doc = json.loads(reply.json()["schedule_document"])
        assert sum(doc["z"]) <= 3
        assert doc["solver"] == "two_sided_exact"
        assert doc["optimality"] == "proved_optimal"

    def test_budget_must_be_given_once(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(epochs=2),
                                                 "seed": 4}).json()["log_document"]
        reply = client.post("/schedule", json={
            "log_document": log_doc, "utility": "neg_loss",
            "options": {"solver": "one_sided", "k": 1, "k_ratio": 0.5},
        })
        assert reply.status_code == 422


class TestDetectEndpoint:
    def test_detect_round_trip(self, client):
        scenario = scenario_payload(epochs=10, dishonest=True)
        log_doc = client.post("/simulate", json={"scenario": scenario,
                                                 "seed": 6}).json()["log_document"]
        timeline_csv = client.post("/assess", json={
            "log_document": log_doc,
            "assessment": {"utility": "neg_loss", "method": {"kind": "exact"}},
        }).json()["timeline_csv"]
        reply = client.post("/detect", json={
            "timeline_csv": timeline_csv,
            "detection": {"window": [3, 10], "hazard": 0.1, "k_clusters": 2},
            "dishonest_truth": [0],
        })
        assert reply.status_code == 200
        report = json.loads(reply.json()["report"])
        assert set(report["change_mass_in_window"]) == {"0", "1", "2", "3"}
        assert report["dishonest_ground_truth"] == [0]
        assert 0.0 <= report["jaccard_honest_separation"] <= 1.0
        assert report["mean_dishonest_window_mass"] > 0.0

    def test_partial_timeline_is_client_error(self, client):
        log_doc = client.post("/simulate", json={"scenario": scenario_payload(),
                                                 "seed": 7}).json()["log_document"]
        timeline_csv = client.post("/assess", json={
            "log_document": log_doc,
            "assessment": {"utility": "neg_loss", "method": {"kind": "exact"},
                           "schedule": {"solver": "one_sided", "k": 2}},
        }).json()["timeline_csv"]
        reply = client.post("/detect", json={
            "timeline_csv": timeline_csv,
            "detection": {"window": [2, 4], "hazard": 0.1},
        })
        assert reply.status_code == 400
        assert "uncomputed" in reply.json()["detail"]


class TestCompareEndpoint:
    def test_small_grid(self, client):
        reply = client.post("/compare", json={"grid": {
            "num_clients": [3], "epochs": [4], "seeds": [0, 1], "fraction": 1.0,
            "data": {"kind": "synthetic", "rows": 160},
            "train": {"local_epochs": 1, "batch_size": 16, "learning_rate": 0.4},
            "mc_samples": [30], "k_ratios": [0.5],
        }})
        assert reply.status_code == 200
        body = reply.json()
        assert body["status"] == "ok"
        table = body["tables"]["comparison_mse.csv"]
        lines = [l for l in table.splitlines() if l and not l.startswith("#")]
        header, rows = lines[0], lines[1:]
        assert header.startswith("instance,method")
        assert len(rows) == 2 * 3  # 2 instances x (exact, mc30, sched)
        for row in rows:
            cells = dict(zip(header.split(","), row.split(",")))
            if cells["method"] == "exact":
                assert float(cells["mse"]) == 0.0
        assert "cactus_mse.csv" in body["tables"]
        assert "comparison_runtime.csv" in body["timing_tables"]
        assert "cactus_runtime.csv" in body["timing_tables"]

    def test_health(self, client):
        reply = client.get("/health")
        assert reply.status_code == 200
        assert reply.json()["status"] == "ok"
