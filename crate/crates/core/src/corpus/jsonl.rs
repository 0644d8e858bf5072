//! JSONL dataset files: one record per line with `segments` or `features`,
//! and an optional `label` or `soft_label`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, Dataset, Example, Label, Payload, Provenance, TaskSchema};
use crate::classifier::SoftLabel;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    soft_label: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &TaskSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_jsonl(&text, schema, &name, path)
}

/// Parses JSONL text; `origin` is only used in error messages.
pub fn parse_jsonl(text: &str, schema: &TaskSchema, name: &str, origin: &Path) -> Result<Dataset> {
    schema.validate()?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let example = record_to_example(record).map_err(&fail)?;
        example.conforms(schema, true).map_err(&fail)?;
        examples.push(example);
    }
    let mut d = Dataset::new_unchecked(name, schema.clone(), examples);
    let kinds = d.iter().map(|e| e.provenance).collect::<std::collections::HashSet<_>>();
    d.mixed_provenance = kinds.len() > 1;
    Ok(d)
}

fn record_to_example(r: Record) -> std::result::Result<Example, String> {
    let payload = match (r.segments, r.features) {
        (Some(segs), None) => Payload::Segments(segs.iter().map(|s| tokenize(s)).collect()),
        (None, Some(f)) => Payload::Features(f),
        (Some(_), Some(_)) => return Err("record has both `segments` and `features`".into()),
        (None, None) => return Err("record has neither `segments` nor `features`".into()),
    };
    let label = match (r.label, r.soft_label) {
        (Some(c), None) => Label::Hard(c),
        (None, Some(p)) => Label::Soft(SoftLabel::new(p).map_err(|e| e.to_string())?),
        (None, None) => Label::Absent,
        (Some(_), Some(_)) => return Err("record has both `label` and `soft_label`".into()),
    };
    Ok(Example::new(payload, label, r.provenance.unwrap_or_default()))
}

fn example_to_record(e: &Example) -> Record {
    let (segments, features) = match &e.payload {
        Payload::Segments(s) => (Some(s.iter().map(|seg| seg.join(" ")).collect()), None),
        Payload::Features(f) => (None, Some(f.clone())),
    };
    let (label, soft_label) = match &e.label {
        Label::Absent => (None, None),
        Label::Hard(c) => (Some(*c), None),
        Label::Soft(s) => (None, Some(s.as_slice().to_vec())),
    };
    Record {
        segments,
        features,
        label,
        soft_label,
        provenance: match e.provenance {
            Provenance::Original => None,
            Provenance::Synthetic => Some(Provenance::Synthetic),
        },
    }
}

pub fn to_jsonl(d: &Dataset) -> Result<String> {
    let mut out = String::new();
    for e in d {
        out.push_str(&serde_json::to_string(&example_to_record(e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(to_jsonl(d)?.as_bytes()).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text_schema() -> TaskSchema {
        TaskSchema::text(2, 2).unwrap()
    }

    #[test]
    fn loads_valid_records_in_order() {
        let text = r#"{"segments": ["A man", "a dog"], "label": 1}
{"segments": ["x", "y z"]}
{"segments": ["p", "q"], "soft_label": [0.25, 0.75]}
"#;
        let d = parse_jsonl(text, &text_schema(), "t", Path::new("t.jsonl")).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.examples()[0].label, Label::Hard(1));
        assert_eq!(
            d.examples()[0].payload,
            Payload::Segments(vec![vec!["a".into(), "man".into()], vec!["a".into(), "dog".into()]])
        );
        assert!(d.examples()[1].label.is_absent());
        assert!(matches!(d.examples()[2].label, Label::Soft(_)));
    }

    #[test]
    fn segment_count_violation_names_line() {
        let text = "{\"segments\": [\"a\", \"b\"]}\n{\"segments\": [\"a\", \"b\", \"c\"]}\n";
        let err = parse_jsonl(text, &text_schema(), "t", Path::new("t.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("segments"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let text = "{\"segments\": [\"a\", \"b\"], \"label\": 2}\n";
        assert!(matches!(
            parse_jsonl(text, &text_schema(), "t", Path::new("t")),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = "{\"segments\": [\"a\", \"b\"], \"label\": -1}\n";
        assert!(parse_jsonl(text, &text_schema(), "t", Path::new("t")).is_err());
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\"segments\": [\"a\", \"b\"]}\n\n{oops\n";
        assert!(matches!(
            parse_jsonl(text, &text_schema(), "t", Path::new("t")),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let d = parse_jsonl("", &text_schema(), "t", Path::new("t")).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "{\"features\": [1.5, -2.0], \"label\": 0}\n").unwrap();
        let schema = TaskSchema::continuous(2, 2).unwrap();
        let d = load_dataset(&p, &schema).unwrap();
        assert_eq!(d.name, "d");
        let q = dir.path().join("e.jsonl");
        save_dataset(&d, &q).unwrap();
        assert_eq!(load_dataset(&q, &schema).unwrap().examples(), d.examples());
        assert!(matches!(
            load_dataset(dir.path().join("missing.jsonl"), &schema),
            Err(Error::Io { .. })
        ));
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        let words = proptest::collection::vec("[a-z]{1,5}", 1..4);
        let segs = proptest::collection::vec(words, 2..=2);
        let label = prop_oneof![
            Just(Label::Absent),
            (0usize..2).prop_map(Label::Hard),
            (0.0f64..=1.0).prop_map(|p| Label::Soft(SoftLabel::from_weights(vec![p, 1.0 - p]))),
        ];
        (segs, label, any::<bool>()).prop_map(|(s, l, syn)| {
            let prov = if syn { Provenance::Synthetic } else { Provenance::Original };
            Example::new(Payload::Segments(s), l, prov)
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(examples in proptest::collection::vec(arb_example(), 0..20)) {
            let mut d = Dataset::new_unchecked("t", text_schema(), examples);
            d.mixed_provenance = true;
            let text = to_jsonl(&d).unwrap();
            let back = parse_jsonl(&text, &text_schema(), "t", Path::new("t")).unwrap();
            prop_assert_eq!(back.examples(), d.examples());
        }
    }
}
