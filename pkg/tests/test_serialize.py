import json

import numpy as np
import pytest

from fedshapley.errors import ContractError
from fedshapley.models import Utility
from fedshapley.serialize import (assessment_summary, config_hash,
                                  gradient_log_to_json, parse_gradient_log,
                                  parse_schedule_document, parse_timeline_csv,
                                  schedule_document, timeline_to_csv)
from fedshapley.shapley import Exact, assess

from test_shapley import make_log


def awkward_floats_log():
    log = make_log([(0, 1), (1, 2)], m=3, seed=13)
    # inject floats whose decimal round-trip is the interesting part
    log.initial_model[0] = 0.1 + 0.2
    log.initial_model[1] = 1e-17
    log.initial_model[2] = -1.2345678901234567e300
    log.epochs[0].global_before[0] = 0.1 + 0.2
    return log


class TestGradientLogRoundTrip:
    def test_bit_exact_round_trip(self):
        log = awkward_floats_log()
        text = gradient_log_to_json(log)
        parsed = parse_gradient_log(text)
        assert np.array_equal(parsed.initial_model, log.initial_model)
        assert parsed.num_clients == log.num_clients
        assert parsed.model_spec == log.model_spec
        assert np.array_equal(parsed.validation.features, log.validation.features)
        assert np.array_equal(parsed.validation.labels, log.validation.labels)
        for orig, back in zip(log.epochs, parsed.epochs):
            assert orig.participants == back.participants
            assert orig.data_sizes == back.data_sizes
            assert np.array_equal(orig.global_before, back.global_before)
            assert np.array_equal(orig.global_after, back.global_after)
            for cid in orig.participants:
                assert np.array_equal(orig.gradients[cid], back.gradients[cid])

    def test_serialization_is_deterministic(self):
        log = make_log([(0, 1)], m=2, seed=3)
        assert gradient_log_to_json(log) == gradient_log_to_json(log)

    def test_version_tag_checked(self):
        log = make_log([(0, 1)], m=2, seed=3)
        doc = json.loads(gradient_log_to_json(log))
        doc["version"] = 99
        with pytest.raises(ContractError, match="version"):
            parse_gradient_log(json.dumps(doc))
        doc["format"] = "something-else"
        with pytest.raises(ContractError, match="not a gradient log"):
            parse_gradient_log(json.dumps(doc))

    def test_double_round_trip_is_identity(self):
        log = awkward_floats_log()
        once = gradient_log_to_json(log)
        twice = gradient_log_to_json(parse_gradient_log(once))
        assert once == twice


class TestTimelineCsv:
    def test_round_trip_values_and_flags(self):
        log = make_log([(0, 1), (1, 2), (0, 2)], m=3, seed=5)
        timeline = assess(log, Utility.NEG_LOSS, Exact(), schedule=[1, 0, 1]).timeline
        text = timeline_to_csv(timeline, meta={"config_hash": "abc", "seed": 7})
        parsed = parse_timeline_csv(text)
        assert np.array_equal(parsed.computed, timeline.computed)
        computed = timeline.computed
        assert np.array_equal(parsed.values[:, computed], timeline.values[:, computed])
        assert parsed.utility is timeline.utility
        assert "# config_hash=abc" in text
        assert "# seed=7" in text

    def test_uncomputed_epochs_have_empty_phi(self):
        log = make_log([(0, 1), (1, 2)], m=3, seed=6)
        timeline = assess(log, Utility.NEG_LOSS, Exact(), schedule=[0, 1]).timeline
        lines = [l for l in timeline_to_csv(timeline).splitlines()
                 if l and not l.startswith("#")][1:]
        for line in lines:
            cid, t, phi, flag, cum = line.split(",")
            if t == "1":
                assert phi == "" and flag == "0"
            else:
                assert phi != "" and flag == "1"

    def test_garbage_rejected(self):
        with pytest.raises(ContractError):
            parse_timeline_csv("not,a,timeline\n1,2,3\n")


class TestDocuments:
    def test_schedule_document_round_trip(self):
        from fedshapley.scheduling import Optimality, Schedule, SolverKind

        schedule = Schedule(z=(1, 0, 1), k=2, gamma=0.5, solver=SolverKind.ONE_SIDED,
                            objective_value=0.75, optimality=Optimality.PROVED_OPTIMAL)
        doc = schedule_document(schedule, meta={"config_hash": "x"})
        assert parse_schedule_document(doc) == [1, 0, 1]
        parsed = json.loads(doc)
        assert parsed["selected_epochs"] == [1, 3]
        assert parsed["config_hash"] == "x"

    def test_summary_has_no_wall_clock(self):
        log = make_log([(0, 1)], m=2, seed=8)
        result = assess(log, Utility.NEG_LOSS, Exact())
        doc = assessment_summary(result.timeline, result.eval_counts, result.completed)
        parsed = json.loads(doc)
        assert "elapsed" not in doc and "seconds" not in doc
        assert parsed["total_evaluations"] == sum(result.eval_counts.values())
        assert parsed["completed"] is True
        assert parsed["final_validation_loss"] == -parsed["final_utility"]

    def test_config_hash_stable_and_order_insensitive(self):
        a = config_hash({"x": 1, "y": [1, 2]})
        b = config_hash({"y": [1, 2], "x": 1})
        assert a == b
        assert a != config_hash({"x": 2, "y": [1, 2]})
