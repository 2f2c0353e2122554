mod common;

use std::fs;

use codemix::preprocess::{normalize, NormRules};
use common::{args, GOLDEN};

#[test]
fn fixtures_match() {
    let rules = NormRules::starter();
    for (name, raw, want) in GOLDEN {
        assert_eq!(normalize(raw, &rules).join(" "), want, "fixture {name}");
    }
}

#[test]
fn every_rule_has_a_fixture() {
    let names: Vec<&str> = GOLDEN.iter().map(|g| g.0).collect();
    for rule in ["url", "mention", "hashtag", "lowercase", "mark_collapse", "slang", "emoji"] {
        assert!(names.contains(&rule), "{rule}");
    }
}

#[test]
fn output_is_idempotent() {
    let rules = NormRules::starter();
    for (name, raw, _) in GOLDEN {
        let once = normalize(raw, &rules).join(" ");
        assert_eq!(normalize(&once, &rules).join(" "), once, "fixture {name}");
    }
}

#[test]
fn cli_preprocess_writes_golden_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.txt");
    let output = dir.path().join("norm.txt");
    let raw: Vec<&str> = GOLDEN.iter().map(|g| g.1).collect();
    fs::write(&input, raw.join("\n")).unwrap();
    let argv = args(&["preprocess", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(codemix::cli::run_with(argv, &mut Vec::new()), 0);
    let want: String = GOLDEN.iter().map(|g| format!("{}\n", g.2)).collect();
    assert_eq!(fs::read(&output).unwrap(), want.into_bytes());
}
