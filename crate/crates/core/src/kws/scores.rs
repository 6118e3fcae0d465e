//! Score files: one utterance per line,
//!
//! ```text
//! <id> <score> <1|0 positive> <duration seconds or ->
//! ```
//!
//! separated by whitespace. Blank lines and lines starting with `#` are
//! ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{KwsError, Result, ScoredUtterance};

pub fn write_score_file(path: impl AsRef<Path>, scores: &[ScoredUtterance]) -> Result<()> {
    std::fs::write(path, format_scores(scores))?;
    Ok(())
}

pub fn format_scores(scores: &[ScoredUtterance]) -> String {
    let mut out = String::from("# id score positive duration_s\n");
    for s in scores {
        let dur = s.duration_s.map_or("-".to_string(), |d| format!("{d}"));
        // `{}` on f64 prints the shortest string that parses back exactly.
        writeln!(out, "{} {} {} {}", s.id, s.score, s.positive as u8, dur).unwrap();
    }
    out
}

pub fn read_score_file(path: impl AsRef<Path>) -> Result<Vec<ScoredUtterance>> {
    parse_scores(&std::fs::read_to_string(path)?)
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoredUtterance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| KwsError::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(err("expected 4 columns"));
        }
        let score: f64 = cols[1].parse().map_err(|_| err("bad score"))?;
        if !score.is_finite() {
            return Err(err("score is not finite"));
        }
        let positive = match cols[2] {
            "1" => true,
            "0" => false,
            _ => return Err(err("positive flag must be 1 or 0")),
        };
        let duration_s = match cols[3] {
            "-" => None,
            d => Some(d.parse().map_err(|_| err("bad duration"))?),
        };
        out.push(ScoredUtterance {
            id: cols[0].to_string(),
            score,
            positive,
            duration_s,
        });
    }
    Ok(out)
}
