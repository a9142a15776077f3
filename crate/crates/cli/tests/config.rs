use replica_cli::config::{validate_config, Task, Units};
use replica_core::amp::AmpScaling;
use serde_json::json;

#[test]
fn missing_transition_row_names_its_index() {
    let doc = json!({
        "version": 1,
        "model": { "prior": { "type": "markov", "states": [-1, 1], "transition": [[0.7, 0.3]] } },
        "sweep": [1.0]
    });
    let errs = validate_config(&doc).unwrap_err();
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].path, "model.prior.transition[1]");
}

#[test]
fn zero_switching_rate_is_an_error() {
    let doc = json!({ "version": 1, "model": { "prior": { "type": "binary_markov", "alpha": 0.0, "delta": 0.3 } }, "sweep": [1.0] });
    let errs = validate_config(&doc).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].path, "model.prior");
    assert!(errs[0].message.contains("irreducible"));
}

#[test]
fn sparse_document_gets_defaults() {
    let doc = json!({
        "version": 1,
        "model": { "prior": { "type": "sparse_hmm", "kappa": 0.3, "gamma": 0.8 } },
        "sweep": { "start": 0.5, "stop": 1.0, "step": 0.5 },
        "tasks": ["amp", "replica"],
        "n": 100,
        "trials": 2
    });
    let cfg = validate_config(&doc).unwrap();
    assert_eq!(cfg.iterations, 10);
    assert_eq!(cfg.units, Units::Nats);
    assert_eq!(cfg.tasks, vec![Task::Replica, Task::Amp]);
    assert_eq!(cfg.betas, vec![0.5, 1.0]);
    assert_eq!(cfg.amp_scaling, AmpScaling::Verbatim);
    let sp = cfg.sparse.unwrap();
    assert_eq!((sp.kappa, sp.gamma), (0.3, 0.8));
}

#[test]
fn hidden_markov_document() {
    let doc = json!({
        "version": 1,
        "model": {
            "prior": {
                "type": "hidden_markov",
                "transition": [[0.9, 0.1], [0.2, 0.8]],
                "emissions": [
                    { "components": [{ "weight": 1.0, "point": 0.0 }] },
                    { "components": [{ "weight": 0.5, "mean": 0.0, "variance": 1.0 }, { "weight": 0.5, "point": 2.0 }] }
                ]
            },
            "snr": [{ "value": 1.0, "probability": 0.5 }, { "value": 2.0, "probability": 0.5 }]
        },
        "sweep": [0.5, 0.25],
        "units": "bits",
        "amp": { "normalized_a": true }
    });
    let cfg = validate_config(&doc).unwrap();
    assert_eq!(cfg.betas, vec![0.25, 0.5]);
    assert_eq!(cfg.units, Units::Bits);
    assert_eq!(cfg.amp_scaling, AmpScaling::SqrtN);
}

#[test]
fn task_support_is_checked() {
    let doc = json!({
        "version": 1,
        "model": { "prior": { "type": "binary_markov", "alpha": 0.3, "delta": 0.3 } },
        "sweep": [1.0],
        "tasks": ["amp", "exact_sim"],
        "n": 30,
        "trials": 5
    });
    let errs = validate_config(&doc).unwrap_err();
    let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
    assert!(paths.contains(&"n"), "{paths:?}");
    assert!(paths.contains(&"tasks[1]"), "{paths:?}");
    let doc = json!({ "version": 1, "model": { "prior": { "type": "binary_markov", "alpha": 0.3, "delta": 0.3 } }, "sweep": [1.0], "tasks": ["mh"] });
    let errs = validate_config(&doc).unwrap_err();
    assert_eq!(errs.iter().map(|e| e.path.as_str()).collect::<Vec<_>>(), vec!["n", "trials"]);
}

#[test]
fn bad_rows_and_laws_are_all_reported() {
    let doc = json!({
        "version": 1,
        "model": {
            "prior": { "type": "markov", "states": [0, 1, 2], "transition": [[0.5, 0.5, 0.0], [0.2, 0.2], [0.1, 0.1, 0.1], [1, 0, 0]] },
            "postulated_prior": { "type": "hidden_markov", "transition": [[1.0]], "emissions": [{ "components": [{ "weight": 1.0, "mean": 0.0 }] }] }
        },
        "sweep": { "start": 2.0, "stop": 1.0, "step": 0.1 },
        "tasks": []
    });
    let errs = validate_config(&doc).unwrap_err();
    let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
    for p in [
        "model.prior.transition[1]",
        "model.prior.transition[2]",
        "model.prior.transition[3]",
        "model.postulated_prior.emissions[0].components[0].variance",
        "sweep.stop",
        "tasks",
    ] {
        assert!(paths.contains(&p), "{p} not in {paths:?}");
    }
}

#[test]
fn malformed_json_is_a_single_error() {
    let errs = replica_cli::validate_str("{ not json").unwrap_err();
    assert_eq!(errs.len(), 1);
}
