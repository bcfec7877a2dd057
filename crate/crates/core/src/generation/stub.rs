//! Deterministic offline generation backend.
//!
//! The stub emits a plausible function per sample: the name is the
//! underscore-join of the documentation tokens suffixed with the sample
//! index, and the body references every documentation token as an
//! identifier. The body shape is one of four templates picked by a seeded
//! hash of (doc tokens, sample index, seed), so output is byte-identical
//! across runs and machines.

use crate::seeds::{fnv1a, splitmix64};

fn sanitize(token: &str) -> String {
    let s: String = token
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    if s.is_empty() {
        "t".to_string()
    } else {
        s
    }
}

pub fn generate_stub(doc_tokens: &[String], sample_index: usize, seed: u64) -> String {
    let idents: Vec<String> = doc_tokens.iter().map(|t| sanitize(t)).collect();
    let name = format!("{}_{sample_index}", idents.join("_"));

    let mut key = fnv1a(name.as_bytes());
    for t in doc_tokens {
        key = splitmix64(key ^ fnv1a(t.as_bytes()));
    }
    let template = splitmix64(key ^ seed) % 4;

    let mut out = format!("def {name}(arg):\n");
    match template {
        0 => {
            // assignment chain
            let mut prev = "arg".to_string();
            for id in &idents {
                out.push_str(&format!("    {id} = {prev}\n"));
                prev = id.clone();
            }
            out.push_str(&format!("    return {prev}\n"));
        }
        1 => {
            out.push_str(&format!("    items = [{}]\n", idents.join(", ")));
            out.push_str("    return items\n");
        }
        2 => {
            out.push_str(&format!("    value = {}\n", idents.join(" + ")));
            out.push_str("    return value\n");
        }
        _ => {
            out.push_str("    result = arg\n");
            for id in &idents {
                out.push_str(&format!("    result = {id}(result)\n"));
            }
            out.push_str("    return result\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn output_is_a_function_of_inputs_only() {
        let d = doc(&["inverse", "dict"]);
        assert_eq!(generate_stub(&d, 0, 42), generate_stub(&d, 0, 42));
        assert_ne!(generate_stub(&d, 0, 42), generate_stub(&d, 1, 42));
    }

    #[test]
    fn frozen_sample_text() {
        // Frozen output: the stub is part of the reproducibility contract,
        // so any change to it must be deliberate.
        let d = doc(&["inverse", "dict"]);
        let text = generate_stub(&d, 0, 42);
        assert!(text.starts_with("def inverse_dict_0(arg):\n"));
        assert!(text.contains("inverse"));
        assert!(text.contains("dict"));
    }

    #[test]
    fn name_line_holds_joined_doc_tokens() {
        let d = doc(&["find", "max", "value"]);
        let text = generate_stub(&d, 2, 0);
        let first = text.lines().next().unwrap();
        assert_eq!(first, "def find_max_value_2(arg):");
    }

    #[test]
    fn non_identifier_characters_are_stripped() {
        let d = doc(&["a.b", "(", "x-y"]);
        let text = generate_stub(&d, 0, 0);
        let first = text.lines().next().unwrap();
        assert_eq!(first, "def ab_t_xy_0(arg):");
    }

    #[test]
    fn every_doc_token_appears_in_body() {
        let d = doc(&["alpha", "beta", "gamma"]);
        for sample in 0..4 {
            let text = generate_stub(&d, sample, 9);
            let body: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
            for t in &d {
                assert!(body.contains(t), "missing {t} in sample {sample}: {body}");
            }
        }
    }
}
