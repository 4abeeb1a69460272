//! Output collection: every artifact is written through one sink that
//! records a checksum for the manifest, in deterministic order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use atlas_core::io::{encode_ppm, fnv1a64, format_full, write_emat};
use atlas_core::tensor::Tensor;

use crate::pipeline::PipelineError;

pub struct OutputSink {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutputSink {
    pub fn new(dir: &Path) -> Result<OutputSink, PipelineError> {
        fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Io(format!("creating {}: {e}", dir.display())))?;
        Ok(OutputSink {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifacts(&self) -> &BTreeMap<String, String> {
        &self.artifacts
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| PipelineError::Io(format!("writing {}: {e}", path.display())))?;
        self.artifacts
            .insert(name.to_string(), format!("{:016x}", fnv1a64(bytes)));
        Ok(())
    }

    pub fn write_string(&mut self, name: &str, text: &str) -> Result<(), PipelineError> {
        self.write_bytes(name, text.as_bytes())
    }

    /// CSV with a header row; every numeric cell at full precision.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), PipelineError> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_string(name, &text)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| PipelineError::Io(format!("serializing {name}: {e}")))?;
        self.write_string(name, &(text + "\n"))
    }

    pub fn write_tensor_emat(&mut self, name: &str, t: &Tensor) -> Result<(), PipelineError> {
        let mut bytes = Vec::new();
        write_emat(&mut bytes, t).map_err(|e| PipelineError::Io(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_tensor_ppm(&mut self, name: &str, t: &Tensor) -> Result<(), PipelineError> {
        let bytes = encode_ppm(t).map_err(|e| PipelineError::Io(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }
}

/// Full-precision cell.
pub fn cell(v: f64) -> String {
    format_full(v)
}
