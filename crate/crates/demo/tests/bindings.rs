use cognilab_demo::{explore_confidences, group_advantages_of, Playground};
use serde_json::Value;

#[test]
fn explorer_reports_the_worked_example() {
    let v: Value =
        serde_json::from_str(&explore_confidences(1.0, 0.0, 0.0, 0.0, 2.0, 1.5)).unwrap();
    let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
    assert!((w[0] - 0.9713).abs() < 1e-3);
    let a: Vec<f64> = serde_json::from_value(v["advantages"].clone()).unwrap();
    assert!((a.iter().sum::<f64>() - 1.5).abs() < 1e-12);
}

#[test]
fn group_advantages_handle_degenerate_groups() {
    assert_eq!(group_advantages_of(vec![1.0, 0.0]), vec![1.0, -1.0]);
    assert_eq!(group_advantages_of(vec![0.5; 3]), vec![0.0; 3]);
    assert!(group_advantages_of(vec![1.0]).is_empty());
}

#[test]
fn following_hints_solves_the_task() {
    let mut p = Playground::new(3);
    while !p.hint().is_empty() {
        let h = p.hint();
        p.act(&h);
    }
    let v: Value = serde_json::from_str(&p.view()).unwrap();
    assert_eq!(v["success"], Value::Bool(true));
    assert_eq!(p.act("look"), "episode already finished");
}
