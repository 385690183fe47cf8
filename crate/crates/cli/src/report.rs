//! JSON run reports. The shape is described by `docs/report.schema.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use topicrnn::model::{EpochMetrics, ParamBreakdown};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: Option<u64>,
    /// Echo of the effective settings.
    pub config: serde_json::Value,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub parameters: Option<ParamBreakdown>,
    pub valid_perplexity: Option<f64>,
    pub test_perplexity: Option<f64>,
    pub error_rate: Option<f64>,
    pub window: Option<usize>,
    pub seconds: f64,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            seed: None,
            config,
            epochs: Vec::new(),
            best_epoch: None,
            parameters: None,
            valid_perplexity: None,
            test_perplexity: None,
            error_rate: None,
            window: None,
            seconds: 0.0,
        }
    }

    fn check_finite(&self) -> Result<(), CliError> {
        let mut values = vec![self.seconds];
        values.extend(self.valid_perplexity);
        values.extend(self.test_perplexity);
        values.extend(self.error_rate);
        for e in &self.epochs {
            values.extend([e.train_elbo_per_token, e.valid_perplexity, e.kl_per_token, e.seconds, e.train_elbo]);
        }
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CliError::NonFinite("report contains a non-finite number".into()))
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        self.check_finite()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_refused() {
        let mut r = RunReport::new("eval", serde_json::json!({}));
        r.test_perplexity = Some(f64::NAN);
        assert!(matches!(r.to_json(), Err(CliError::NonFinite(_))));
        r.test_perplexity = Some(3.5);
        let back: RunReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
