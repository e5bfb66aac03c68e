use affect_demo::{compare_combiners, parse_rows, score_text, ToyScorer};
use serde_json::Value;

#[test]
fn rows_accept_commas_spaces_and_comments() {
    let rows = parse_rows("1, 2\n# note\n\n3 4  # trailing\n").unwrap();
    assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert!(parse_rows("1 2\n3\n").unwrap_err().contains("line 2"));
    assert!(parse_rows("1 x").unwrap_err().contains("`x`"));
    assert!(parse_rows("  \n").is_err());
}

#[test]
fn scoring_reports_both_targets_and_their_mean() {
    let gold = "1 7\n2 5\n3 3\n4 1\n";
    let v: Value = serde_json::from_str(&score_text("2 1\n4 2\n6 3\n8 4\n", gold).unwrap()).unwrap();
    assert!((v["empathy"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["distress"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert!(v["average"].as_f64().unwrap().abs() < 1e-12);
    assert!(score_text("1 1\n2 2\n", gold).is_err());
    assert!(score_text("4 4\n4 4\n4 4\n4 4\n", gold).is_err());
}

#[test]
fn combiners_are_compared_on_held_out_rows() {
    let mut matrix = String::new();
    let mut gold = String::new();
    for i in 0..20 {
        let g = 1.0 + (i % 7) as f64 * 0.8;
        matrix.push_str(&format!("{} {}\n", g + 0.3 * ((i * 3 % 5) as f64 - 2.0), g + 0.2 * ((i % 3) as f64 - 1.0)));
        gold.push_str(&format!("{g}\n"));
    }
    let v: Value = serde_json::from_str(&compare_combiners(&matrix, &gold, 1).unwrap()).unwrap();
    assert_eq!(v["fit_rows"], 10);
    let results = v["results"].as_array().unwrap();
    let names: Vec<&str> = results.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["model 1", "model 2", "mean", "linear_regression", "svr", "gradient_boosted_trees"]);
    let mean = results[2]["pearson"].as_f64().unwrap();
    assert!(mean > 0.9, "{mean}");
    assert_eq!(compare_combiners(&matrix, &gold, 1).unwrap(), compare_combiners(&matrix, &gold, 1).unwrap());
    assert!(compare_combiners("1\n2\n", "1\n2\n", 0).is_err());
}

#[test]
fn toy_scorer_learns_the_trigger_words() {
    let scorer = ToyScorer::train(7).unwrap();
    let report: Value = serde_json::from_str(&scorer.report()).unwrap();
    assert!(report["empathy"].as_f64().unwrap() > 0.9, "{report}");
    let [e_sad, d_sad] = scorer.score("sad sad sad the story was sad and i was sad").unwrap();
    let [e_afraid, d_afraid] = scorer.score("afraid afraid the news made me afraid and afraid").unwrap();
    assert!(e_sad > e_afraid && d_afraid > d_sad, "{e_sad} {d_sad} {e_afraid} {d_afraid}");
    assert!(scorer.score("   ").is_err());
}
