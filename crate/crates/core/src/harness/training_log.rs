use std::path::Path;

use crate::error::{DmbaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub skipped: usize,
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    pub fn total_skipped(&self) -> usize {
        self.epochs.iter().map(|e| e.skipped).sum()
    }

    /// Columns `epoch,mean_loss,skipped`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "mean_loss", "skipped"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), format!("{:e}", e.mean_loss), e.skipped.to_string()])?;
        }
        w.flush().map_err(|e| DmbaError::io(path, e))
    }
}

