//! Plain-text score files.
//!
//! Line 1 is the header `litmas-scores v1`; every following non-blank,
//! non-`#` line is one record:
//!
//! ```text
//! <id>\t<modality>\t<dataset_tag>\t<label>\t<score>
//! ```
//!
//! with `label` 0 for bonafide, 1 for spoof, and `score` the liveness
//! score as a shortest round-trip decimal, so load(write(r)) == r exactly.

use std::io::Write as _;
use std::path::Path;

use crate::dataio::{format_f64, Label};

use super::{MetricError, Result, ScoreRecord};

const MAGIC: &str = "litmas-scores v1";

pub fn write_score_file(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let io_err = |source| MetricError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for r in records {
        if !r.score.is_finite() {
            return Err(MetricError::NonFinite(r.id.clone()));
        }
        for (name, field) in [
            ("id", &r.id),
            ("modality", &r.modality),
            ("dataset tag", &r.dataset_tag),
        ] {
            if field.is_empty() || field.contains(['\t', '\n']) {
                return Err(MetricError::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    msg: format!("unwritable {name} {field:?} for record {:?}", r.id),
                });
            }
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.modality,
            r.dataset_tag,
            r.label.as_u8(),
            format_f64(r.score)
        ));
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

pub fn load_score_file(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |line: usize, msg: String| MetricError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((n, l)) => return Err(err(n, format!("expected header {MAGIC:?}, got {l:?}"))),
        None => return Err(err(1, format!("empty file, expected header {MAGIC:?}"))),
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(err(
                n,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let label = match fields[3] {
            "0" => Label::Bonafide,
            "1" => Label::Spoof,
            other => return Err(err(n, format!("label must be 0 or 1, got {other:?}"))),
        };
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| err(n, format!("bad score {:?}", fields[4])))?;
        if !score.is_finite() {
            return Err(err(n, format!("non-finite score {:?}", fields[4])));
        }
        records.push(ScoreRecord {
            id: fields[0].to_string(),
            modality: fields[1].to_string(),
            dataset_tag: fields[2].to_string(),
            label,
            score,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, m: &str, tag: &str, label: Label, score: f64) -> ScoreRecord {
        ScoreRecord {
            id: id.to_string(),
            modality: m.to_string(),
            dataset_tag: tag.to_string(),
            label,
            score,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let records = vec![
            rec("a-0001", "speech", "dev", Label::Bonafide, 0.1),
            rec("a-0002", "face", "dev", Label::Spoof, -3.25e-17),
            rec("a-0003", "iris", "eval", Label::Spoof, 12345.678901),
            rec("a-0004", "speech", "eval", Label::Bonafide, -0.0),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        write_score_file(&path, &records).unwrap();
        let back = load_score_file(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a, b);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        std::fs::write(
            &path,
            "# preamble\nlitmas-scores v1\n\nx\tspeech\tdev\t1\t0.5\n# trailing\n",
        )
        .unwrap();
        assert_eq!(load_score_file(&path).unwrap().len(), 1);
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        for (body, expect_line) in [
            ("litmas-scores v1\nx\tspeech\tdev\t2\t0.5\n", 2),
            ("litmas-scores v1\nx\tspeech\tdev\t1\n", 2),
            ("litmas-scores v1\n\nx\tspeech\tdev\t1\tnan\n", 3),
            ("litmas-features v1 dim=2\n", 1),
        ] {
            std::fs::write(&path, body).unwrap();
            match load_score_file(&path) {
                Err(MetricError::Parse { line, .. }) => assert_eq!(line, expect_line, "{body:?}"),
                other => panic!("expected parse error for {body:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn non_finite_scores_are_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        let r = rec("x", "speech", "dev", Label::Bonafide, f64::NAN);
        assert!(matches!(
            write_score_file(&path, &[r]),
            Err(MetricError::NonFinite(_))
        ));
    }
}
