use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Example, Input};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    tokens: Vec<usize>,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<Vec<u8>>,
}

fn to_bits(r: &Option<Vec<bool>>) -> Option<Vec<u8>> {
    r.as_ref().map(|v| v.iter().map(|&b| u8::from(b)).collect())
}

fn from_bits(r: Option<Vec<u8>>) -> std::result::Result<Option<Vec<bool>>, String> {
    r.map(|v| {
        v.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(format!("rationale entries must be 0 or 1, got {other}")),
            })
            .collect()
    })
    .transpose()
}

fn parse_line(line: &str) -> std::result::Result<Example, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let ex = if obj.contains_key("tokens") {
        let r: TextRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
        Example {
            input: Input::Text { tokens: r.tokens },
            label: r.label,
            rationale: from_bits(r.rationale)?,
        }
    } else if obj.contains_key("num_nodes") {
        let r: GraphRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
        Example {
            input: Input::Graph {
                num_nodes: r.num_nodes,
                edges: r.edges,
                features: r.features,
            },
            label: r.label,
            rationale: from_bits(r.rationale)?,
        }
    } else {
        return Err("missing field `tokens` (text) or `num_nodes` (graph)".into());
    };
    ex.validate().map_err(|e| e.to_string())?;
    Ok(ex)
}

/// Reads one example per line. Blank lines are skipped.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_line(&line).map_err(|detail| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl(examples: &[Example], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = match &ex.input {
            Input::Text { tokens } => serde_json::to_string(&TextRecord {
                tokens: tokens.clone(),
                label: ex.label,
                rationale: to_bits(&ex.rationale),
            }),
            Input::Graph {
                num_nodes,
                edges,
                features,
            } => serde_json::to_string(&GraphRecord {
                num_nodes: *num_nodes,
                edges: edges.clone(),
                features: features.clone(),
                label: ex.label,
                rationale: to_bits(&ex.rationale),
            }),
        }
        .map_err(|e| Error::Numerical(format!("cannot serialize example: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_graphs, gen_text, GraphGenSpec, TextGenSpec};

    fn write_lines(dir: &tempfile::TempDir, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn text_schema_instance() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(&dir, &[r#"{"tokens":[3,7,9],"label":1,"rationale":[0,1,0]}"#]);
        let exs = read_jsonl(&path).unwrap();
        assert_eq!(exs.len(), 1);
        assert_eq!(exs[0].len(), 3);
        assert_eq!(exs[0].tokens(), Some(&[3, 7, 9][..]));
        assert_eq!(exs[0].rationale, Some(vec![false, true, false]));
    }

    #[test]
    fn rejects_bad_lines_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let ok = r#"{"tokens":[1],"label":0}"#;
        let cases = [
            (r#"{"tokens":[3,7],"label":1,"rationale":[0,1,0]}"#, "rationale length"),
            (r#"{"tokens":[3,7],"label":1,"#, "malformed"),
            (r#"{"tokens":[3,7]}"#, "label"),
            (r#"{"num_nodes":2,"edges":[[0,1]],"label":0}"#, "features"),
            (r#"{"label":0}"#, "tokens"),
            (r#"{"tokens":[1],"label":3}"#, "label must be"),
        ];
        for (bad, needle) in cases {
            let path = write_lines(&dir, &[ok, bad]);
            let err = read_jsonl(&path).unwrap_err();
            match &err {
                Error::Parse { line, detail, .. } => {
                    assert_eq!(*line, 2);
                    assert!(detail.contains(needle), "{detail}");
                }
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_jsonl("/nonexistent/dir/x.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.jsonl"));
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let text = gen_text(&TextGenSpec {
            train_size: 1000,
            dev_size: 0,
            test_size: 0,
            ..TextGenSpec::default()
        })
        .unwrap()
        .train;
        let path = dir.path().join("text.jsonl");
        write_jsonl(&text, &path).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), text);

        let graphs = gen_graphs(&GraphGenSpec {
            train_size: 50,
            dev_size: 0,
            test_size: 0,
            ..GraphGenSpec::default()
        })
        .unwrap()
        .train;
        let path = dir.path().join("graphs.jsonl");
        write_jsonl(&graphs, &path).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), graphs);
    }
}
