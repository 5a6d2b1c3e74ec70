use edgeplan::planner::{bundled_dataset, parse_dataset};
use edgeplan::registry::{load_scenario, Scenario, TaskKind, Tier, BUNDLED_SCENARIO};

#[test]
fn bundled_network_and_training_defaults() {
    let s = Scenario::bundled();
    assert_eq!(s.links.client_edge_up.rate, 250_000.0);
    assert_eq!(s.links.client_edge_down.rate, 500_000.0);
    let fl = s.fl.as_ref().unwrap();
    assert_eq!(
        (fl.n_clients, fl.local_epochs, fl.global_rounds, fl.batch_size),
        (10, 10, 30, 100)
    );
    assert!(s.device(Tier::Cloud).is_some());
}

#[test]
fn bundled_scenario_covers_every_task() {
    let s = Scenario::bundled();
    for task in &s.planner.solvable_tasks {
        assert!(s.models.iter().any(|m| &m.task_kind == task), "no model for {task}");
    }
    assert!(s.model("vit").is_some_and(|m| m.task_kind == TaskKind::ImageClassification));
}

#[test]
fn loading_from_disk_matches_the_bundled_copy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, BUNDLED_SCENARIO).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), Scenario::bundled());
}

#[test]
fn bundled_requests_are_balanced() {
    let data = bundled_dataset();
    for kind in [TaskKind::ImageClassification, TaskKind::ImageCaptioning, TaskKind::Vqa] {
        assert_eq!(data.iter().filter(|r| r.label == kind).count(), 20);
    }
}

#[test]
fn dataset_lines_need_both_fields() {
    assert!(parse_dataset("{\"request\": \"hi\"}\n").is_err());
    let ok = parse_dataset("# comment\n\n{\"request\": \"hi\", \"label\": \"vqa\"}\n").unwrap();
    assert_eq!(ok.len(), 1);
}
