use tblab_harness::config::ALL_SUITES;
use tblab_harness::coverage::{markdown_rows, COVERAGE};

#[test]
fn readme_lists_every_family() {
    let readme =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    for row in markdown_rows() {
        assert!(readme.contains(&row), "README is missing `{row}`");
    }
}

#[test]
fn every_suite_has_families() {
    for s in ALL_SUITES {
        assert!(COVERAGE.iter().any(|(suite, _, _)| *suite == s), "{s}");
    }
    assert!(COVERAGE
        .iter()
        .all(|(s, _, _)| *s == "*" || ALL_SUITES.contains(s)));
}
