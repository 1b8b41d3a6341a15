use milkit::metrics::{ConfusionMatrix, EvalReport};
use milkit::model::CasePrediction;
use milkit::report::{metrics_csv, render_table, write_metrics_csv, CaseReport};

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn two_class() -> EvalReport {
    // benign: 2 of 3 right, malignant: 2 of 2 right.
    let cm = ConfusionMatrix::from_pairs(2, &[(0, 0), (0, 0), (0, 1), (1, 1), (1, 1)]).unwrap();
    EvalReport::new(cm, &names(&["benign", "malignant"])).unwrap()
}

#[test]
fn metrics_csv_matches_golden_file() {
    let golden = include_str!("fixtures/metrics_2class.csv");
    assert_eq!(metrics_csv(&two_class()), golden);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&two_class(), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), golden);
    assert!(write_metrics_csv(&two_class(), &dir.path().join("missing/metrics.csv")).is_err());
}

#[test]
fn csv_rereads_to_report_numbers() {
    let r = two_class();
    let csv = metrics_csv(&r);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for (row, c) in rows.iter().zip(&r.per_class) {
        let sen: f64 = row[2].parse().unwrap();
        assert!((sen - c.sensitivity.unwrap()).abs() <= 5e-7);
        assert!((row[3].parse::<f64>().unwrap() - c.f1).abs() <= 5e-7);
    }
    assert!((rows[2][4].parse::<f64>().unwrap() - r.weighted_accuracy).abs() <= 5e-7);
    let table = render_table(&r);
    assert!(table.contains("0.8333") && table.contains("malignant"));
}

#[test]
fn empty_matrix_is_an_error() {
    let err = EvalReport::new(ConfusionMatrix::new(2), &names(&["a", "b"])).unwrap_err();
    assert!(err.to_string().contains("no cases"));
}

fn prediction(scores: Vec<f64>, kept: Vec<bool>) -> CasePrediction {
    CasePrediction {
        logits: vec![0.1, 0.9],
        probabilities: vec![0.31002551887238755, 0.6899744811276125],
        predicted_class: 1,
        per_instance_scores: scores,
        kept_mask: kept,
        stage_thresholds: vec![0.3, 0.55],
    }
}

#[test]
fn svg_is_well_formed_and_marks_kept() {
    let p = prediction(vec![0.2, 0.9, 0.6, 0.4], vec![false, true, true, false]);
    let r = CaseReport::new("case <&\"'>", 0, &p, &names(&["A&B", "C<D"])).unwrap();
    let svg = r.svg_chart();
    let doc = roxmltree::Document::parse(&svg).expect("strict XML");
    let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
    assert_eq!(circles.len(), 4);
    let kept: Vec<bool> = circles.iter().map(|c| c.attribute("class") == Some("kept")).collect();
    assert_eq!(kept, p.kept_mask);
    assert!(doc.descendants().any(|n| n.has_tag_name("line")));
    assert!(doc.descendants().any(|n| n.text().is_some_and(|t| t.contains("case <&\"'>"))));
}

#[test]
fn single_instance_chart() {
    let p = prediction(vec![0.7], vec![true]);
    let r = CaseReport::new("solo", 1, &p, &names(&["a", "b"])).unwrap();
    let doc_src = r.svg_chart();
    let doc = roxmltree::Document::parse(&doc_src).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 1);
    assert!(!doc.descendants().any(|n| n.has_tag_name("polyline")));
    assert_eq!(r.scores_csv(), "instance,score,kept\n0,0.700000000,1\n");
}

#[test]
fn case_report_files() {
    let p = prediction(vec![0.2, 0.9], vec![false, true]);
    let r = CaseReport::new("c1", 1, &p, &names(&["a", "b"])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path(), "c1").unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c1_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["predicted"], "b");
    assert_eq!(summary["threshold"], 0.55);
    assert_eq!(summary["scores"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("c1.svg").exists());
    assert!(CaseReport::new("c1", 5, &p, &names(&["a", "b"])).is_err());
}
