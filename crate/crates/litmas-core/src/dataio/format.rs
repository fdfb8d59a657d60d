//! Self-describing feature file format.
//!
//! UTF-8 text. Line 1: `litmas-features v1 dim=<D>`. Line 2:
//! `modalities=<name0,name1,...>`. Then one sample per line:
//! `<id>\t<modality-name>\t<label 0|1>\t<dataset_tag>\t<f0> <f1> ...`
//! with floats in shortest-round-trip decimal, so write∘load is the
//! identity bit for bit. Lines starting with `#` are comments.

use std::io::Write as _;
use std::path::Path;

use super::{DataError, DatasetView, Label, ModalityTable, Result, Sample};

const MAGIC: &str = "litmas-features v1";

pub fn load_feature_file(path: &Path) -> Result<DatasetView> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let p = path.display().to_string();
    let parse_err = |line: usize, msg: String| DataError::Parse {
        path: p.clone(),
        line,
        msg,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".to_string()))?;
    let dim_field = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .and_then(|rest| rest.strip_prefix("dim="))
        .ok_or_else(|| {
            parse_err(
                hline,
                format!("expected `{MAGIC} dim=<D>`, got {header:?}"),
            )
        })?;
    let input_dim: usize = dim_field
        .parse()
        .map_err(|_| parse_err(hline, format!("bad dimension {dim_field:?}")))?;
    if input_dim == 0 {
        return Err(parse_err(hline, "dimension must be positive".to_string()));
    }

    let (mline, mods_line) = lines
        .next()
        .ok_or_else(|| parse_err(hline + 1, "missing modalities line".to_string()))?;
    let names = mods_line
        .strip_prefix("modalities=")
        .ok_or_else(|| parse_err(mline, format!("expected `modalities=...`, got {mods_line:?}")))?;
    let names: Vec<&str> = names.split(',').map(str::trim).collect();
    let table = ModalityTable::new(&names)
        .map_err(|e| parse_err(mline, e.to_string()))?;

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let mut fields = line.split('\t');
        let (id, mod_name, label, tag, floats) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(a), Some(b), Some(c), Some(d), Some(e), None) => (a, b, c, d, e),
            _ => {
                return Err(parse_err(
                    lineno,
                    "expected 5 tab-separated fields: id, modality, label, tag, features"
                        .to_string(),
                ))
            }
        };
        let modality = table
            .id_of(mod_name)
            .ok_or_else(|| parse_err(lineno, format!("unknown modality {mod_name:?}")))?;
        let label = label
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| parse_err(lineno, format!("label must be 0 or 1, got {label:?}")))?;
        let mut features = Vec::with_capacity(input_dim);
        for tok in floats.split_ascii_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad float {tok:?}")))?;
            features.push(v);
        }
        if features.len() != input_dim {
            return Err(parse_err(
                lineno,
                format!("expected {} features, got {}", input_dim, features.len()),
            ));
        }
        samples.push(Sample {
            id: id.to_string(),
            modality,
            label,
            dataset_tag: tag.to_string(),
            features,
        });
    }
    DatasetView::new(table, input_dim, samples)
}

pub fn write_feature_file(view: &DatasetView, path: &Path) -> Result<()> {
    let io_err = |source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    out.push_str(&format!("{MAGIC} dim={}\n", view.input_dim()));
    out.push_str(&format!(
        "modalities={}\n",
        view.modalities().names().join(",")
    ));
    for s in view.samples() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t",
            s.id,
            view.modalities().name(s.modality),
            s.label.as_u8(),
            s.dataset_tag
        ));
        for (j, v) in s.features.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Shortest decimal that round-trips the exact f64 bits. Rust's `{}`
/// formatting guarantees this for finite values; non-finite values also
/// round-trip through `parse`.
pub fn format_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}
