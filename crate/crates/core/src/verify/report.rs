use std::fmt;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// Outcome of one check. `status` is `Pass` iff `metric <= tolerance`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    pub metric: f64,
    pub tolerance: f64,
    pub elapsed_ms: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, metric: f64, tolerance: f64, seed: u64, started: Instant) -> Self {
        // NaN compares false, so it fails
        let status = if metric <= tolerance { Status::Pass } else { Status::Fail };
        CheckReport {
            name: name.into(),
            status,
            metric,
            tolerance,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            seed,
            detail: None,
        }
    }

    /// A yes/no check: metric 0 on success, 1 on failure, tolerance 0.
    pub fn boolean(name: impl Into<String>, ok: bool, seed: u64, started: Instant) -> Self {
        Self::new(name, if ok { 0.0 } else { 1.0 }, 0.0, seed, started)
    }

    pub fn failed(name: impl Into<String>, seed: u64, started: Instant, detail: impl Into<String>) -> Self {
        Self::new(name, f64::INFINITY, 0.0, seed, started).with_detail(detail)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        };
        write!(
            f,
            "{tag} {:<36} metric={:.3e} tol={:.1e} seed={} {:.1}ms",
            self.name, self.metric, self.tolerance, self.seed, self.elapsed_ms
        )?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_metric() {
        let t = Instant::now();
        assert!(CheckReport::new("a", 1e-5, 1e-4, 0, t).passed());
        assert!(!CheckReport::new("a", 1e-3, 1e-4, 0, t).passed());
        assert!(!CheckReport::new("a", f64::NAN, 1e-4, 0, t).passed());
        assert!(CheckReport::boolean("b", true, 0, t).passed());
    }
}
