use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch gradient norms of one sample with their mean and (population)
/// standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientTrace {
    pub id: String,
    pub norms: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

fn moments(norms: &[f64]) -> (f64, f64) {
    if norms.is_empty() {
        return (0.0, 0.0);
    }
    // Constant traces get exactly zero spread whatever their scale.
    if norms.iter().all(|x| *x == norms[0]) {
        return (norms[0], 0.0);
    }
    let n = norms.len() as f64;
    let mu = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

impl GradientTrace {
    pub fn new(id: impl Into<String>, norms: Vec<f64>) -> Self {
        let (mu, sigma) = moments(&norms);
        Self {
            id: id.into(),
            norms,
            mu,
            sigma,
        }
    }

    /// True when the stored statistics agree with the norms to 1e-12 and
    /// every norm is finite and non-negative.
    pub fn is_consistent(&self) -> bool {
        let (mu, sigma) = moments(&self.norms);
        self.norms.iter().all(|x| x.is_finite() && *x >= 0.0)
            && (mu - self.mu).abs() <= 1e-12
            && (sigma - self.sigma).abs() <= 1e-12
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.id.clone(), self.norms.iter().map(|x| x * k).collect())
    }
}

/// Writes one JSON object per trace.
pub fn save_traces(traces: &[GradientTrace], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = String::new();
    for t in traces {
        out += &serde_json::to_string(t)?;
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct TraceLine {
    id: String,
    norms: Vec<f64>,
    mu: Option<f64>,
    sigma: Option<f64>,
}

/// Reads traces; `mu`/`sigma` are recomputed when absent and checked when
/// present.
pub fn load_traces(path: &Path) -> Result<Vec<GradientTrace>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let rec: TraceLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let t = GradientTrace::new(rec.id, rec.norms);
        let stored = GradientTrace {
            mu: rec.mu.unwrap_or(t.mu),
            sigma: rec.sigma.unwrap_or(t.sigma),
            ..t.clone()
        };
        if t.norms.is_empty() || !stored.is_consistent() {
            return Err(malformed("empty, negative or inconsistent gradient norms".into()));
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let t = GradientTrace::new("a", vec![1.0]);
        assert_eq!((t.mu, t.sigma), (1.0, 0.0));
        let t = GradientTrace::new("b", vec![1.0, 3.0]);
        assert_eq!((t.mu, t.sigma), (2.0, 1.0));
        assert!(t.is_consistent());
    }

    #[test]
    fn round_trip_and_consistency_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let traces = vec![
            GradientTrace::new("x", vec![0.5, 0.25, 0.125]),
            GradientTrace::new("y", vec![2.0, 2.0]),
        ];
        save_traces(&traces, &path).unwrap();
        assert_eq!(load_traces(&path).unwrap(), traces);

        fs::write(&path, "{\"id\":\"z\",\"norms\":[1.0,2.0]}\n").unwrap();
        assert_eq!(load_traces(&path).unwrap()[0].mu, 1.5);
        fs::write(&path, "{\"id\":\"z\",\"norms\":[1.0,2.0],\"mu\":9.0}\n").unwrap();
        assert!(load_traces(&path).is_err());
        fs::write(&path, "{\"id\":\"z\",\"norms\":[-1.0]}\n").unwrap();
        assert!(load_traces(&path).is_err());
    }
}
