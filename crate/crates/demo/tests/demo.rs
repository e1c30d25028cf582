use atypia_demo::{dendrogram_json, ig_fit_json, ig_samples, planted_csv, Edit, Explorer};
use serde_json::Value;

#[test]
fn prior_fit_recovers_generator() {
    let s = ig_samples(2.0, 5.0, 5000, 1).unwrap();
    let fit: Value = serde_json::from_str(&ig_fit_json(&s, 1e-3).unwrap()).unwrap();
    assert!((fit["mean"].as_f64().unwrap() - 2.0).abs() < 0.1);
    assert!((fit["shape"].as_f64().unwrap() - 5.0).abs() < 0.5);
    assert_eq!(fit["shift"], 0.0);
    let counts: u64 = fit["histogram"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(counts, 5000);
    let cdf: Vec<f64> = fit["curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p[2].as_f64().unwrap())
        .collect();
    assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn negative_samples_are_shifted() {
    let s: Vec<f64> = ig_samples(1.0, 2.0, 500, 3).unwrap().iter().map(|x| x - 3.0).collect();
    let fit: Value = serde_json::from_str(&ig_fit_json(&s, 0.5).unwrap()).unwrap();
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((fit["shift"].as_f64().unwrap() - (0.5 - min)).abs() < 1e-12);
    assert!(ig_fit_json(&[1.0], 1e-3).is_err());
}

#[test]
fn explorer_edits_raise_the_matching_score() {
    let ex = Explorer::build(7).unwrap();
    let normal = (0..ex.len())
        .find(|&i| {
            let r: Value = serde_json::from_str(&ex.score_json(i, Edit::default()).unwrap()).unwrap();
            r["label"] == "normal" && r["verdict"] == "normal"
        })
        .unwrap();
    let at = |edit: Edit| -> Value { serde_json::from_str(&ex.score_json(normal, edit).unwrap()).unwrap() };
    let base = at(Edit::default());
    let scene = at(Edit {
        scene_attr_shift: 0.4,
        ..Edit::default()
    });
    assert!(scene["raw"]["surprise_scene"].as_f64() > base["raw"]["surprise_scene"].as_f64());
    let moved = at(Edit {
        dx: 0.6,
        dy: 0.6,
        ..Edit::default()
    });
    assert_ne!(moved["boxes"][0], base["boxes"][0]);
    assert!(ex.score_json(ex.len(), Edit::default()).is_err());
}

#[test]
fn dendrogram_recovers_planted_groups() {
    let csv = planted_csv(6, 4).unwrap();
    let t: Value = serde_json::from_str(&dendrogram_json(&csv, 3, "ward").unwrap()).unwrap();
    let clusters: Vec<u64> = t["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert_eq!(clusters, [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2]);
    assert_eq!(t["merges"].as_array().unwrap().len(), 17);
    assert!(dendrogram_json(&csv, 3, "median").is_err());
    assert!(dendrogram_json("not,a\ntable", 3, "ward").is_err());
}
