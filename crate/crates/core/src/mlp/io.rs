//! On-disk format: a JSON manifest next to a raw little-endian `f64` blob.
//! The blob holds, in order: parameters, running means, running variances,
//! Adam first moments, Adam second moments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{init_with_input, MlpConfig, MlpState};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    toolkit_version: String,
    config: MlpConfig,
    input_dim: usize,
    layer_shapes: Vec<(usize, usize)>,
    step: u64,
    blob: String,
    sections: Vec<Section>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_state(state: &MlpState, stem: impl AsRef<Path>) -> Result<()> {
    let (json_path, bin_path) = paths(stem.as_ref());
    let running_mean: Vec<f64> = state.running_mean.concat();
    let running_var: Vec<f64> = state.running_var.concat();
    let parts: [(&str, &[f64]); 5] = [
        ("params", &state.params),
        ("running_mean", &running_mean),
        ("running_var", &running_var),
        ("adam_m", &state.adam_m),
        ("adam_v", &state.adam_v),
    ];
    let mut blob = Vec::new();
    let mut sections = Vec::new();
    let mut offset = 0;
    for (name, values) in parts {
        sections.push(Section {
            name: name.to_string(),
            offset,
            len: values.len(),
        });
        offset += values.len();
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        toolkit_version: crate::VERSION.to_string(),
        config: state.config.clone(),
        input_dim: state.input_dim,
        layer_shapes: state.layer_shapes(),
        step: state.step,
        blob: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sections,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(&bin_path, blob)?;
    Ok(())
}

pub fn load_state(stem: impl AsRef<Path>) -> Result<MlpState> {
    let (json_path, bin_path) = paths(stem.as_ref());
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let bytes = fs::read(&bin_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Shape("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut state = init_with_input(&manifest.config, manifest.input_dim, 0)?;
    if state.layer_shapes() != manifest.layer_shapes {
        return Err(Error::Shape("layer shapes disagree with the config".into()));
    }
    let section = |name: &str, expected: usize| -> Result<&[f64]> {
        let s = manifest
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Shape(format!("missing section `{name}`")))?;
        if s.len != expected || s.offset + s.len > values.len() {
            return Err(Error::Shape(format!("section `{name}` has the wrong size")));
        }
        Ok(&values[s.offset..s.offset + s.len])
    };
    let n = state.params.len();
    state.params.copy_from_slice(section("params", n)?);
    state.adam_m.copy_from_slice(section("adam_m", n)?);
    state.adam_v.copy_from_slice(section("adam_v", n)?);
    let stat_len: usize = state.running_mean.iter().map(Vec::len).sum();
    let mut rm = section("running_mean", stat_len)?.iter();
    for v in state.running_mean.iter_mut().flatten() {
        *v = *rm.next().expect("sized");
    }
    let mut rv = section("running_var", stat_len)?.iter();
    for v in state.running_var.iter_mut().flatten() {
        *v = *rv.next().expect("sized");
    }
    state.step = manifest.step;
    Ok(state)
}
