use codemix_web::{explore_gate, gate_at_bias, normalize_tweet, DemoClassifier};

#[test]
fn normalize_returns_json_tokens() {
    let tokens: Vec<String> = serde_json::from_str(&normalize_tweet("@Bob http://x.co GREAT!!!")).unwrap();
    assert_eq!(tokens, ["user", "great", "!"]);
}

#[test]
fn gate_extremes_pick_one_source() {
    let open = explore_gate(30.0, 0.0, 3);
    assert!(open.mixed.iter().zip(&open.chars).all(|(m, c)| (m - c).abs() < 1e-9));
    let shut = explore_gate(-30.0, 0.0, 3);
    assert!(shut.mixed.iter().zip(&shut.word).all(|(m, w)| (m - w).abs() < 1e-9));
    let half = explore_gate(0.0, 0.0, 3);
    assert!(half.gate.iter().all(|&g| g == 0.5));
    assert_eq!(gate_at_bias(0.0), 0.5);
}

#[test]
fn gate_values_stay_in_unit_interval() {
    for seed in 0..20 {
        let v = explore_gate(seed as f64 - 10.0, 2.0, seed);
        assert!(v.gate.iter().all(|g| (0.0..=1.0).contains(g)));
        for i in 0..v.mixed.len() {
            let (lo, hi) = (v.word[i].min(v.chars[i]), v.word[i].max(v.chars[i]));
            assert!(v.mixed[i] >= lo - 1e-12 && v.mixed[i] <= hi + 1e-12);
        }
    }
}

#[test]
fn classifier_learns_lexicon() {
    let demo = DemoClassifier::train_new(1, 40).unwrap();
    assert_eq!(demo.history().epochs.len(), 40);
    let pos = demo.classify_text("the phone is GREAT!!").unwrap();
    assert_eq!(pos.label, "positive");
    // no word vector for "bura": the character path carries it
    let neg = demo.classify_text("bura hai").unwrap();
    assert_eq!(neg.label, "negative");
    assert!(neg.tokens[0].oov);
    assert_eq!(demo.classify_text("okay today").unwrap().label, "neutral");
    let sum: f64 = pos.probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    let attn: f64 = pos.tokens.iter().map(|t| t.attention).sum();
    assert!((attn - 1.0).abs() < 1e-9);
    assert!(pos.tokens.iter().all(|t| t.gate_mean.is_some()));
}

#[test]
fn classify_handles_empty_text() {
    let demo = DemoClassifier::train_new(2, 2).unwrap();
    let c = demo.classify_text("http://only.a/link").unwrap();
    assert_eq!(c.tokens.len(), 1);
}
