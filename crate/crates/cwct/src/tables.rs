//! Header-less CSV: labels as `frame_index,class_index`, predictions as
//! `frame_index,p_0,...,p_{N_a-1}`.

use std::io::Write;

use cwct_core::Matrix;

use crate::error::{FormatError, Problem};

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes())
}

/// Byte offset of field `i` of the record starting at `start`. The formats
/// never quote, so fields are plain comma splits.
fn field_offset(text: &str, start: usize, i: usize) -> usize {
    let line = text[start..].lines().next().unwrap_or("");
    let mut at = start;
    for (k, f) in line.split(',').enumerate() {
        if k == i {
            return at + (f.len() - f.trim_start().len());
        }
        at += f.len() + 1;
    }
    start
}

fn field<T: std::str::FromStr>(text: &str, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, FormatError> {
    let pos = rec.position().unwrap();
    let start = field_offset(text, pos.byte() as usize, i);
    let line = pos.line();
    let value = rec
        .get(i)
        .ok_or_else(|| FormatError::new(start, format!("line {line} {name}"), Problem::Syntax("missing field".into())))?;
    value
        .parse()
        .map_err(|_| FormatError::new(start, format!("line {line} {name}"), Problem::Syntax(format!("cannot parse `{value}`"))))
}

fn records(text: &str) -> Result<Vec<csv::StringRecord>, FormatError> {
    let mut out = Vec::new();
    for rec in reader(text).records() {
        match rec {
            Ok(r) if r.len() == 1 && r[0].is_empty() => {}
            Ok(r) => out.push(r),
            Err(e) => {
                let offset = e.position().map_or(0, |p| p.byte() as usize);
                return Err(FormatError::new(offset, "record", Problem::Syntax(e.to_string())));
            }
        }
    }
    Ok(out)
}

/// `(frame_index, class_index)` rows, in file order.
pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>, FormatError> {
    records(text)?
        .iter()
        .map(|r| {
            if r.len() != 2 {
                let pos = r.position().unwrap();
                let problem = Problem::Syntax(format!("{} fields, expected 2", r.len()));
                return Err(FormatError::new(pos.byte() as usize, format!("line {}", pos.line()), problem));
            }
            Ok((field(text, r, 0, "frame_index")?, field(text, r, 1, "class_index")?))
        })
        .collect()
}

/// Frame indices and the `T x N_a` probability table.
pub fn parse_predictions(text: &str) -> Result<(Vec<usize>, Matrix), FormatError> {
    let recs = records(text)?;
    let width = recs.first().map_or(0, |r| r.len().saturating_sub(1));
    let mut frames = Vec::with_capacity(recs.len());
    let mut data = Vec::with_capacity(recs.len() * width);
    for r in &recs {
        let pos = r.position().unwrap();
        if r.len() != width + 1 || width == 0 {
            let problem = Problem::Syntax(format!("{} fields, expected {}", r.len(), width + 1));
            return Err(FormatError::new(pos.byte() as usize, format!("line {}", pos.line()), problem));
        }
        frames.push(field(text, r, 0, "frame_index")?);
        for j in 1..=width {
            let v: f32 = field(text, r, j, &format!("probability {}", j - 1))?;
            if !v.is_finite() {
                let start = field_offset(text, pos.byte() as usize, j);
                return Err(FormatError::new(start, format!("line {} probability {}", pos.line(), j - 1), Problem::Syntax("not finite".into())));
            }
            data.push(v);
        }
    }
    Ok((frames, Matrix::from_vec(recs.len(), width, data)))
}

/// Shortest fixed-point text carrying 9 significant digits.
pub fn significant9(v: f32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exponent = (v.abs() as f64).log10().floor() as i32;
    if !(-6..=9).contains(&exponent) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - exponent).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_prediction_row(out: &mut dyn Write, frame: usize, probs: &[f32]) -> std::io::Result<()> {
    let mut line = frame.to_string();
    for &p in probs {
        line.push(',');
        line.push_str(&significant9(p));
    }
    line.push('\n');
    out.write_all(line.as_bytes())
}
