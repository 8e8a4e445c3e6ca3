use std::fs;
use std::path::Path;

use crate::error::Result;

use super::config::RunConfig;
use super::plots::emit_plots;
use super::record::RunRecord;
use super::run::RunOutput;

/// Write a run directory: `config.json`, `model.json`, `record.json`,
/// `timing.json`, `plots/` and `raw/` with one CSV per rollout batch.
pub fn persist_run(out: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("raw"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    if let Some(m) = &out.model {
        fs::write(dir.join("model.json"), serde_json::to_string(m)?)?;
    }
    fs::write(dir.join("record.json"), out.record.to_json()?)?;
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&out.timing)?)?;
    for (label, batch) in &out.batches {
        batch.write_csv(&dir.join("raw").join(format!("{label}.csv")))?;
    }
    if !out.record.iterations.is_empty() {
        emit_plots(&out.record, &dir.join("plots"))?;
    }
    Ok(())
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    RunRecord::from_json(&fs::read_to_string(path)?)
}
