use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::tracker::N_MODES;

/// Per-scan record of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub scan: usize,
    pub is_miss: bool,
    /// Log prefix probability per pattern; `-inf` once the pattern is dead.
    pub log_probs: Vec<f64>,
    /// Posterior over patterns, normalized over the live ones.
    pub posterior: Vec<f64>,
    pub map_label: Option<String>,
    pub mode_probs: [f64; N_MODES],
    /// Grammar prior fed to the tracker this scan, if any.
    pub mode_prior: Option<[f64; N_MODES]>,
    /// `[x, y, vx, vy]`.
    pub state: [f64; 4],
    /// Row-major 4x4 covariance.
    pub cov: [f64; 16],
    pub position_cov_trace: f64,
    pub n_eff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternLikelihoodTrace {
    pub hypothesis: usize,
    pub patterns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Pattern(String),
    Unclassified,
}

impl Classification {
    pub fn name(&self) -> &str {
        match self {
            Classification::Pattern(p) => p,
            Classification::Unclassified => "unclassified",
        }
    }
}

/// Index of the largest positive entry; ties go to the lexicographically
/// smallest name.
pub(crate) fn argmax_label(post: &[f64], names: &[String]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in post.iter().enumerate() {
        if !(p > 0.0) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if p > post[b] || (p == post[b] && names[i] < names[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

impl PatternLikelihoodTrace {
    pub fn new(hypothesis: usize, patterns: Vec<String>) -> Self {
        PatternLikelihoodTrace { hypothesis, patterns, rows: Vec::new() }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Posterior of `pattern` at every scan.
    pub fn posterior_of(&self, pattern: &str) -> Option<Vec<f64>> {
        let i = self.patterns.iter().position(|p| p == pattern)?;
        Some(self.rows.iter().map(|r| r.posterior[i]).collect())
    }

    /// Long-format CSV: one line per scan and pattern.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "hypothesis,scan,pattern,log_prob,posterior,map_label,cov_trace")?;
        }
        for r in &self.rows {
            let map = r.map_label.as_deref().unwrap_or("unclassified");
            for (i, p) in self.patterns.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.hypothesis, r.scan, p, r.log_probs[i], r.posterior[i], map, r.position_cov_trace
                )?;
            }
        }
        Ok(())
    }
}

/// Argmax of the final-scan prefix probabilities, or `Unclassified` when no
/// pattern is alive.
pub fn classify_map(trace: &PatternLikelihoodTrace) -> Classification {
    let Some(row) = trace.last() else { return Classification::Unclassified };
    let mut best: Option<usize> = None;
    for (i, &l) in row.log_probs.iter().enumerate() {
        if l == f64::NEG_INFINITY || l.is_nan() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b)
                if l > row.log_probs[b] || (l == row.log_probs[b] && trace.patterns[i] < trace.patterns[b]) =>
            {
                Some(i)
            }
            keep => keep,
        };
    }
    best.map_or(Classification::Unclassified, |i| Classification::Pattern(trace.patterns[i].clone()))
}
