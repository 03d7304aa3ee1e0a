//! Plain-text dataset format.
//!
//! The first non-blank line is a header:
//!
//! ```text
//! #tsgcl-v1 d_t=<int> d_a=<int> d_v=<int> labels=<name,name,...>
//! ```
//!
//! Every following non-blank, non-comment line is one utterance record with
//! seven tab-separated fields:
//!
//! ```text
//! <dialogue_id>\t<turn>\t<speaker>\t<label>\tt:<f,...>\ta:<f,...>\tv:<f,...>
//! ```
//!
//! Records of a dialogue must be contiguous with turns numbered 0..N-1 in
//! order. Floats accept scientific notation and must be finite.

use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Dialogue, LabelScheme, ModalityDims, Utterance};
use crate::error::{Error, Result};

const MAGIC: &str = "#tsgcl-v1";

/// Parsed header of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub dims: ModalityDims,
    pub label_names: Vec<String>,
}

fn parse_header(line: &str, lineno: usize) -> Result<Header> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::data(
            lineno,
            format!("first line must start with {MAGIC}"),
        ));
    }
    let (mut d_t, mut d_a, mut d_v, mut labels) = (None, None, None, None);
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::data(lineno, format!("bad header field {part:?}")))?;
        match key {
            "d_t" | "d_a" | "d_v" => {
                let n: usize = value
                    .parse()
                    .map_err(|_| Error::data(lineno, format!("bad {key} value {value:?}")))?;
                if n == 0 {
                    return Err(Error::data(lineno, format!("{key} must be positive")));
                }
                match key {
                    "d_t" => d_t = Some(n),
                    "d_a" => d_a = Some(n),
                    _ => d_v = Some(n),
                }
            }
            "labels" => {
                let names: Vec<String> = value.split(',').map(|s| s.to_string()).collect();
                if names.iter().any(|n| n.is_empty()) {
                    return Err(Error::data(lineno, "empty label name in header"));
                }
                labels = Some(names);
            }
            other => return Err(Error::data(lineno, format!("unknown header key {other:?}"))),
        }
    }
    match (d_t, d_a, d_v, labels) {
        (Some(text), Some(audio), Some(visual), Some(label_names)) => Ok(Header {
            dims: ModalityDims { text, audio, visual },
            label_names,
        }),
        _ => Err(Error::data(lineno, "header must declare d_t, d_a, d_v, labels")),
    }
}

fn parse_feature_vec(field: &str, tag: char, want: usize, lineno: usize) -> Result<Vec<f64>> {
    let rest = field
        .strip_prefix(tag)
        .and_then(|r| r.strip_prefix(':'))
        .ok_or_else(|| Error::data(lineno, format!("feature field must start with \"{tag}:\"")))?;
    let values: Result<Vec<f64>> = rest
        .split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::data(lineno, format!("bad float {s:?}")))?;
            if !v.is_finite() {
                return Err(Error::data(lineno, format!("non-finite value {s:?}")));
            }
            Ok(v)
        })
        .collect();
    let values = values?;
    if values.len() != want {
        return Err(Error::data(
            lineno,
            format!("{tag} vector has {} values, expected {want}", values.len()),
        ));
    }
    Ok(values)
}

/// Parse a dataset from text. The header's label list must match the scheme
/// exactly (same names, same order).
pub fn parse_dataset(text: &str, scheme: &LabelScheme) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (header, header_line) = loop {
        match lines.next() {
            Some((n, l)) if l.trim().is_empty() => {
                let _ = n;
                continue;
            }
            Some((n, l)) => break (parse_header(l.trim(), n)?, n),
            None => return Err(Error::data(0, "empty input")),
        }
    };
    if header.label_names != scheme.names() {
        return Err(Error::data(
            header_line,
            format!(
                "header labels {:?} do not match scheme {:?}",
                header.label_names,
                scheme.names()
            ),
        ));
    }

    let mut dialogues: Vec<Dialogue> = Vec::new();
    let mut seen_ids: Vec<String> = Vec::new();
    for (lineno, raw) in lines {
        let line = raw.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::data(
                lineno,
                format!("expected 7 tab-separated fields, got {}", fields.len()),
            ));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(Error::data(lineno, "empty dialogue id"));
        }
        let turn: usize = fields[1]
            .parse()
            .map_err(|_| Error::data(lineno, format!("bad turn {:?}", fields[1])))?;
        let speaker: usize = fields[2]
            .parse()
            .map_err(|_| Error::data(lineno, format!("bad speaker {:?}", fields[2])))?;
        let label = scheme.index_of(fields[3])?;
        let text_f = parse_feature_vec(fields[4], 't', header.dims.text, lineno)?;
        let audio_f = parse_feature_vec(fields[5], 'a', header.dims.audio, lineno)?;
        let visual_f = parse_feature_vec(fields[6], 'v', header.dims.visual, lineno)?;

        let is_current = dialogues.last().is_some_and(|d| d.id == id);
        if !is_current {
            if seen_ids.iter().any(|s| s == id) {
                return Err(Error::data(
                    lineno,
                    format!("dialogue {id:?} records are not contiguous"),
                ));
            }
            seen_ids.push(id.to_string());
            dialogues.push(Dialogue { id: id.to_string(), utterances: Vec::new() });
        }
        let dialogue = dialogues.last_mut().expect("dialogue pushed above");
        if turn != dialogue.utterances.len() {
            return Err(Error::data(
                lineno,
                format!(
                    "dialogue {id:?}: expected turn {}, got {turn}",
                    dialogue.utterances.len()
                ),
            ));
        }
        dialogue.utterances.push(Utterance {
            speaker,
            label,
            text: text_f,
            audio: audio_f,
            visual: visual_f,
        });
    }

    let dataset = Dataset {
        scheme: scheme.clone(),
        dims: header.dims,
        dialogues,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Serialize a dataset in the same format `parse_dataset` reads. Floats are
/// written with shortest round-trip formatting, so parse(format(ds)) == ds.
pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} d_t={} d_a={} d_v={} labels={}",
        ds.dims.text,
        ds.dims.audio,
        ds.dims.visual,
        ds.scheme.names().join(",")
    );
    for d in &ds.dialogues {
        for (turn, u) in d.utterances.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\tt:{}\ta:{}\tv:{}",
                d.id,
                turn,
                u.speaker,
                ds.scheme.name(u.label),
                join_floats(&u.text),
                join_floats(&u.audio),
                join_floats(&u.visual),
            );
        }
    }
    out
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Read just the header of a dataset file (to build a scheme from its label
/// list before a full load).
pub fn read_header(path: &Path) -> Result<Header> {
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        return parse_header(line.trim(), i + 1);
    }
    Err(Error::data(0, "empty input"))
}

pub fn load_dataset(path: &Path, scheme: &LabelScheme) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, scheme)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, format_dataset(ds))?;
    Ok(())
}
