//! JSON model files. Parameter values are stored as base64 of little-endian
//! f64 bytes so the round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::model::TrainMeta;
use super::{VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::types::ActionProfile;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamBlob {
    name: String,
    rows: usize,
    cols: usize,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: VaeConfig,
    profile: ActionProfile,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    params: Vec<ParamBlob>,
    train_meta: TrainMeta,
}

fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64(name: &str, text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("parameter {name}: bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "parameter {name}: {} bytes for {expected} values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_model<W: Write>(writer: W, model: &VaeModel) -> Result<()> {
    let params = model
        .params
        .ids()
        .map(|id| {
            let v = model.params.value(id);
            ParamBlob { name: model.params.name(id).to_string(), rows: v.rows(), cols: v.cols(), data: encode_f64(v.as_slice()) }
        })
        .collect();
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        config: model.config.clone(),
        profile: (*model.profile).clone(),
        norm_mean: model.norm_mean.clone(),
        norm_std: model.norm_std.clone(),
        params,
        train_meta: model.train_meta.clone(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<VaeModel> {
    let value: serde_json::Value =
        serde_json::from_reader(reader).map_err(|e| Error::Format(format!("model file is not valid JSON: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Format(format!(
                "model format version {v} is not supported (expected {MODEL_FORMAT_VERSION})"
            )))
        }
        None => return Err(Error::Format("model file has no format_version".into())),
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Format(format!("model file: {e}")))?;
    let mut model = VaeModel::new(file.config, Arc::new(file.profile))?;
    if file.params.len() != model.params.len() {
        return Err(Error::Format(format!(
            "model file has {} parameters, config needs {}",
            file.params.len(),
            model.params.len()
        )));
    }
    for blob in &file.params {
        let id = model
            .params
            .id(&blob.name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter {}", blob.name)))?;
        let target = model.params.value_mut(id);
        if target.shape() != (blob.rows, blob.cols) {
            return Err(Error::Format(format!(
                "parameter {} is {}x{}, config needs {:?}",
                blob.name,
                blob.rows,
                blob.cols,
                target.shape()
            )));
        }
        let values = decode_f64(&blob.name, &blob.data, blob.rows * blob.cols)?;
        target.as_mut_slice().copy_from_slice(&values);
    }
    model.set_normalization(file.norm_mean, file.norm_std).map_err(|e| Error::Format(e.to_string()))?;
    model.train_meta = file.train_meta;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &VaeModel) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeModel> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{roundtrip, TrainHyper};
    use crate::numerics::Tensor2;
    use crate::types::ActionChunk;

    fn trained() -> (VaeModel, ActionChunk) {
        let p = Arc::new(ActionProfile::default());
        let data: Vec<ActionChunk> = (0..6)
            .map(|i| ActionChunk::new(Tensor2::from_fn(8, 7, |r, c| ((r + i) as f64 * 0.4 + c as f64).cos() * 5.0), p.clone(), 0).unwrap())
            .collect();
        let hyper = TrainHyper { epochs: 2, batch_size: 4, ..TrainHyper::default() };
        (crate::codec::train(&VaeConfig::tiny(7), &data, &hyper).unwrap(), data[0].clone())
    }

    #[test]
    fn save_load_is_bit_exact() {
        let (model, chunk) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.params().flat_values(), model.params().flat_values());
        assert_eq!(back.norm_mean(), model.norm_mean());
        assert_eq!(back.train_meta(), model.train_meta());
        assert_eq!(roundtrip(&back, &chunk).unwrap(), roundtrip(&model, &chunk).unwrap());
    }

    #[test]
    fn truncated_or_wrong_version_rejected() {
        let (model, _) = trained();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let cut = &buf[..buf.len() / 2];
        assert!(matches!(read_model(cut), Err(Error::Format(_))));

        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["format_version"] = 99.into();
        let err = read_model(serde_json::to_vec(&v).unwrap().as_slice()).unwrap_err();
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn loaded_model_rejects_other_channel_counts() {
        let (model, _) = trained();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        let p = Arc::new(ActionProfile::new(vec!["x".into(), "y".into(), "z".into()], vec![0, 1, 2], vec![], vec![], 60.0).unwrap());
        let chunk = ActionChunk::new(Tensor2::zeros(8, 3), p, 0).unwrap();
        assert!(roundtrip(&back, &chunk).is_err());
    }
}
