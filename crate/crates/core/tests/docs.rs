//! Golden checks tying the published formats in `docs/` to the code.

use std::fs;
use std::path::PathBuf;

use serde_json::Value;

use semrag_core::canonical::canonicalize;
use semrag_core::formula::{normalize_math, parse_expression};
use semrag_core::graph::{NodeType, TypedGraph};
use semrag_core::layout::compile_document;
use semrag_core::llm::{GenerationRequest, Generator, TemplateGenerator};
use semrag_core::query::{build_prompt, verbalize_node, EvidenceRecord};
use semrag_core::{load_document, validate_corpus};

fn docs_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name)
}

fn read(name: &str) -> String {
    fs::read_to_string(docs_path(name)).unwrap()
}

fn fenced_blocks(md: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<String> = None;
    for line in md.lines() {
        if line.starts_with("```") {
            match current.take() {
                Some(block) => out.push(block),
                None => current = Some(String::new()),
            }
        } else if let Some(b) = current.as_mut() {
            b.push_str(line);
            b.push('\n');
        }
    }
    out
}

fn example_graph() -> TypedGraph {
    let doc = load_document(read("example-document.json").as_bytes()).unwrap();
    TypedGraph::merge_units(vec![compile_document(&doc).unit]).unwrap()
}

fn guarded_record() -> EvidenceRecord {
    let g = example_graph();
    let idx = (0..g.node_count())
        .find(|&i| g.node(i).node_type == NodeType::Cell && g.node(i).text == "26")
        .unwrap();
    verbalize_node(&g, idx).unwrap()
}

#[test]
fn example_document_matches_schema_and_loads() {
    let text = read("example-document.json");
    let value: Value = serde_json::from_str(&text).unwrap();
    let schema: Value = serde_json::from_str(&read("intermediate.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let doc = load_document(text.as_bytes()).unwrap();
    assert_eq!(doc.blocks.len(), 4);
    assert!(validate_corpus(std::slice::from_ref(&doc)).is_empty());
    assert_eq!(doc.to_canonical_json(), canonicalize(text.as_bytes()).unwrap());
    let c = compile_document(&doc);
    assert!(c.diagnostics.iter().all(|d| !d.message.contains("equation")), "{:?}", c.diagnostics);
    assert_eq!(c.formulas.len(), 1);
}

#[test]
fn schema_rejects_what_the_loader_rejects() {
    let schema: Value = serde_json::from_str(&read("intermediate.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let mut v: Value = serde_json::from_str(&read("example-document.json")).unwrap();
    v["blocks"][0]["colour"] = Value::from("red");
    assert!(!validator.is_valid(&v));
    assert!(load_document(v.to_string().as_bytes()).is_err());
}

#[test]
fn documented_record_line_is_exact() {
    let rec = guarded_record();
    let md = read("prompt-format.md");
    let line = rec.render(1);
    assert!(fenced_blocks(&md).iter().any(|b| b.trim_end() == line), "{line}");
    let answer = TemplateGenerator
        .generate(&GenerationRequest {
            question: String::new(),
            prompt: String::new(),
            records: vec![rec],
        })
        .unwrap();
    assert!(read("cli-json.md").contains(&format!("\"answer\": \"{answer}\"")), "{answer}");
}

#[test]
fn documented_prompt_template_is_exact() {
    let rec = guarded_record();
    let prompt = build_prompt("  Which power?  ", std::slice::from_ref(&rec));
    let template = fenced_blocks(&read("prompt-format.md"))
        .into_iter()
        .find(|b| b.starts_with("Question: "))
        .unwrap();
    let expected = template
        .replace("<question, trimmed>", "Which power?")
        .replace("<record 1>\n<record 2>\n...\n", &format!("{}\n", rec.render(1)));
    assert_eq!(prompt, expected.trim_end());
    assert!(build_prompt("q", &[]).contains("Evidence:\n(none)\n"));
}

#[test]
fn normalisation_table_rows_hold() {
    let cases = [
        (r"\frac{a}{b}", "(a)/(b)"),
        (r"a \cdot b", "a * b"),
        (r"a \times b", "a * b"),
        (r"a \div b", "a / b"),
        (r"\left( a \right)", "( a )"),
        (r"\log_2(x)", "log2(x)"),
        (r"\log_{2}(x)", "log2(x)"),
        (r"\log(x)", "log(x)"),
        (r"\sqrt{x}", "sqrt(x)"),
        (r"\mathrm{SNR}", "SNR"),
        (r"\sum_{i=1}^{N} x_i", "sum(i,1,N,x_i)"),
        (r"\alpha + \Omega", "alpha + Omega"),
        (r"a\,b", "a b"),
        (r"N_{0}", "N_0"),
        (r"x^{2}", "x^(2)"),
        ("a − b", "a - b"),
        ("a × b · c ÷ d", "a * b * c / d"),
    ];
    for (src, want) in cases {
        assert_eq!(normalize_math(src).unwrap(), want, "{src}");
        assert_eq!(normalize_math(want).unwrap(), want, "idempotent on {want}");
    }
    for bad in [r"\log_{10}(x)", r"\int x", "α", r"\mathrm{a+b}", r"x_{i+1}"] {
        assert!(normalize_math(bad).is_err(), "{bad}");
    }
}

#[test]
fn grammar_notes_hold() {
    assert_eq!(parse_expression("-x^2").unwrap().canonical(), "(-(x ^ 2))");
    assert_eq!(parse_expression("a^b^c").unwrap().canonical(), "(a ^ (b ^ c))");
    assert_eq!(parse_expression("a - b - c").unwrap().canonical(), "((a - b) - c)");
    assert!(parse_expression("B log2(x)").is_err());
    assert!(parse_expression("foo(x)").is_err());
    assert!(parse_expression("sum(1,1,N,x)").is_err());
    let c = parse_expression(&normalize_math(r"C = B \cdot \log_2(1 + S/N)").unwrap()).unwrap();
    assert_eq!(c.canonical(), "(C = (B * log2((1 + (S / N)))))");
}
