from jsonschema import ValidationError

from causalgps.validation.schemas import (
    validate_attempt_record,
    validate_truth,
    validate_tuner_summary,
)

BALANCE = {"mean_ac": 0.05, "median_ac": 0.04, "max_ac": 0.09}


def _summary() -> dict:
    return {
        "schema_version": "1",
        "params": {
            "ci_appr": "weighting",
            "gps_density": "normal",
            "covar_bl_trs": 0.1,
            "covar_bl_trs_type": "maximal",
            "max_attempt": 10,
            "rng_seed": 249,
        },
        "config_hash": "a" * 64,
        "passed_covar_test": True,
        "best_attempt": 1,
        "n_attempts": 1,
        "best_gps_used_params": {
            "attempt": 1,
            "seed": 250,
            "hyperparams": None,
            "learner": "linear",
            "transforms": {},
        },
        "n_rows": 100,
        "original_balance": {"mean_ac": 0.3, "median_ac": 0.25, "max_ac": 0.5},
        "adjusted_balance": BALANCE,
    }


def test_attempt_record_valid_minimal() -> None:
    payload = {"attempt": 1, "seed": 250, "hyperparams": None, "transforms": {}, "passed": False, "error": "EmptyGrid: x"}
    validate_attempt_record(payload)  # should not raise


def test_attempt_record_invalid_balance() -> None:
    payload = {
        "attempt": 1,
        "seed": 250,
        "hyperparams": {"nrounds": 10, "eta": 0.3, "max_depth": 3, "min_child_weight": 1.0},
        "transforms": {"c1": ["pow2"]},
        "adjusted": {"mean_ac": 0.05, "median_ac": 0.04},
        "passed": False,
        "error": None,
    }
    try:
        validate_attempt_record(payload)
        raise AssertionError("This should never happen")
    except ValidationError:
        pass


def test_tuner_summary_valid() -> None:
    validate_tuner_summary(_summary())  # should not raise


def test_tuner_summary_rejects_thread_count() -> None:
    bad = _summary()
    bad["params"]["nthread"] = 4
    try:
        validate_tuner_summary(bad)
        raise AssertionError("This should never happen")
    except ValidationError:
        pass


def test_truth_invalid_missing_field() -> None:
    try:
        validate_truth({"shape": "linear", "n": 100})
        raise AssertionError("This should never happen")
    except ValidationError:
        pass
