use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AggModel;
use crate::error::{Error, Result};

/// Version tag written into every model file.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format_version: u32,
    model: &'a AggModel,
}

#[derive(Deserialize)]
struct ModelFile {
    format_version: u32,
    model: AggModel,
}

impl AggModel {
    /// Serialises the model as one JSON document. Floats are written in
    /// shortest round-trip form, so reading back is bit-exact.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFileRef {
            format_version: MODEL_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<AggModel> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AggModel> {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut s)?;
        Self::from_json(&s)
    }
}
