mod common;

use common::{fixture, random_ast, random_doc, regex_eval};
use landscaper::searchdsl::{emit_sql, eval_query, parse_query, QueryAst, TargetField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

fn atoms(sql: &str) -> Vec<String> {
    let re = Regex::new(r#"REGEXP_CONTAINS\(description\.text, "([^"]*)"\)"#).unwrap();
    re.captures_iter(sql).map(|c| c[1].to_string()).collect()
}

#[test]
fn mpuart_formula_emits_golden_sql() {
    let ast = parse_query(fixture("mpuart_formula.txt").trim()).unwrap();
    let sql = emit_sql(&ast, TargetField::Description);
    assert_eq!(sql, fixture("mpuart_golden.sql").trim_end());
}

#[test]
fn mpuart_terms_follow_published_order() {
    let ast = parse_query(fixture("mpuart_formula.txt").trim()).unwrap();
    let ours = atoms(&emit_sql(&ast, TargetField::Description));
    let reference: Vec<String> = atoms(&fixture("mpuart_published.sql"))
        .into_iter()
        .map(|a| if a.starts_with(' ') { a.to_lowercase() } else { format!(" {}", a.to_lowercase()) })
        .collect();
    assert_eq!(ours.len(), 42);
    assert_eq!(ours, reference);
    assert!(ours.contains(&" virtual%".to_string()));
    assert!(ours.contains(&" ocean ".to_string()));
}

#[test]
fn published_parenthesization_is_kept_below_the_root() {
    let ast = parse_query(fixture("mpuart_formula.txt").trim()).unwrap();
    let sql = emit_sql(&ast, TargetField::Description);
    let published = fixture("mpuart_published.sql");
    let shape = |s: &str| -> String { s.chars().filter(|c| matches!(c, '(' | ')')).collect() };
    assert_eq!(shape(&sql), format!("({})", shape(published.trim())));
}

#[test]
fn mpuart_fixture_documents_match_regex_oracle() {
    let ast = parse_query(fixture("mpuart_formula.txt").trim()).unwrap();
    let docs = [
        "An augmented reality headset for offshore plant inspection.",
        "Virtual space rendering for an FPSO vessel.",
        "A mixed-reality display in a vehicle cockpit.",
        "Real-time environment mapping for drilling platforms.",
        "Augmentation of real estate listings.",
        "A ship hull cleaning robot.",
        "Virtual machines in a data center.",
        "",
        "marine",
        "Environmental sensors on aircraft wings.",
    ];
    for d in docs {
        assert_eq!(eval_query(&ast, d, TargetField::Abstract), regex_eval(&ast, d), "{d:?}");
    }
}

#[test]
fn random_formulas_match_regex_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let ast = random_ast(&mut rng, 3);
        let doc = random_doc(&mut rng);
        assert_eq!(eval_query(&ast, &doc, TargetField::Description), regex_eval(&ast, &doc), "{ast} | {doc:?}");
    }
}

#[test]
fn pretty_printer_round_trips_random_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let ast = random_ast(&mut rng, 4);
        let normalized = match parse_query(&ast.to_string()) {
            Ok(a) => a,
            Err(e) => panic!("{ast}: {e}"),
        };
        // random trees may nest same-operator nodes, which the grammar keeps
        assert_eq!(normalized, ast);
    }
}

#[test]
fn spec_examples() {
    assert_eq!(parse_query("real*").unwrap(), QueryAst::term("real", true));
    let ast = parse_query("(a or b) and c").unwrap();
    assert_eq!(
        ast,
        QueryAst::And(vec![
            QueryAst::Or(vec![QueryAst::term("a", false), QueryAst::term("b", false)]),
            QueryAst::term("c", false)
        ])
    );
    let err = parse_query("(a or b").unwrap_err();
    assert_eq!(err.position, 7);
    assert_eq!(
        emit_sql(&QueryAst::term("virtual", true), TargetField::Description),
        r#"REGEXP_CONTAINS(description.text, " virtual%")"#
    );
}
