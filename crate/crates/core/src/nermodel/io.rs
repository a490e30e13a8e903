//! Model container: `NERLEAK1` magic, a little-endian u64 length followed
//! by key-sorted JSON metadata, the parameter tensors as little-endian f64
//! in declaration order, then a u64 length and the embedded vocabulary file.

use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{LabelSet, ModelConfig, NerModel};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"NERLEAK1";
const FORMAT_VERSION: u64 = 1;

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated,
        _ => Error::Io(e),
    })
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl NerModel {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let tensors: Vec<Value> = self
            .parameter_names()
            .into_iter()
            .map(|(name, shape)| json!({ "name": name, "shape": shape }))
            .collect();
        // serde_json maps are BTreeMaps here, so keys come out sorted.
        let meta = json!({
            "config": serde_json::to_value(&self.config)?,
            "dtype": "f64-le",
            "format_version": FORMAT_VERSION,
            "labels": self.labels.labels(),
            "tag_count": self.labels.tag_count(),
            "tensors": tensors,
        });
        let meta = serde_json::to_vec(&meta)?;
        out.write_all(MAGIC)?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        for tensor in self.parameters() {
            for v in tensor {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        let vocab = self.vocab.to_bytes()?;
        out.write_all(&(vocab.len() as u64).to_le_bytes())?;
        out.write_all(&vocab)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut input, &mut magic)?;
        if &magic != MAGIC {
            if magic.starts_with(b"NERLEAK") {
                return Err(Error::VersionMismatch {
                    found: String::from_utf8_lossy(&magic).into_owned(),
                    expected: "NERLEAK1".into(),
                });
            }
            return Err(Error::Format("not a model file".into()));
        }
        let meta_len = read_u64(&mut input)? as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(&mut input, &mut meta)?;
        let meta: Value = serde_json::from_slice(&meta)?;
        let version = meta["format_version"].as_u64();
        if version != Some(FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                found: format!("{:?}", meta["format_version"]),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        if meta["dtype"] != "f64-le" {
            return Err(Error::Format(format!("unsupported dtype {}", meta["dtype"])));
        }
        let config: ModelConfig = serde_json::from_value(meta["config"].clone())?;
        let labels: LabelSet = serde_json::from_value(meta["labels"].clone())?;
        let mut model = NerModel::new(config, labels)?;

        let declared: Vec<(String, Vec<usize>)> = meta["tensors"]
            .as_array()
            .ok_or_else(|| Error::Format("missing tensor table".into()))?
            .iter()
            .map(|t| serde_json::from_value::<(String, Vec<usize>)>(json!([t["name"], t["shape"]])))
            .collect::<std::result::Result<_, _>>()?;
        if declared != model.parameter_names() {
            return Err(Error::Format("tensor table does not match the configuration".into()));
        }
        for tensor in model.parameters_mut() {
            let mut bytes = vec![0u8; tensor.len() * 8];
            read_exact(&mut input, &mut bytes)?;
            for (v, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        let vocab_len = read_u64(&mut input)? as usize;
        let mut vocab = vec![0u8; vocab_len];
        read_exact(&mut input, &mut vocab)?;
        model.vocab = Vocabulary::from_bytes(&vocab)?;
        Ok(model)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        NerModel::read_from(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        NerModel::from_bytes(&std::fs::read(path)?)
    }
}
