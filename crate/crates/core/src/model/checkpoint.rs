//! Checkpoint container: magic `b"AIAK"`, `u32` version, `u64` header
//! length, a JSON header `{kind, config, tensors: [names]}`, then one AIAT
//! record per tensor in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::attack_model::AttackModel;
use super::config::{AttackModelConfig, ModelConfig};
use super::layers::Module;
use super::transformer::TransformerModel;
use crate::error::{Error, Result};
use crate::tensor::{read_u32, read_u64, Tensor};

const MAGIC: &[u8; 4] = b"AIAK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<C> {
    kind: String,
    config: C,
    tensors: Vec<String>,
}

fn write_container<C: Serialize, W: Write>(w: &mut W, kind: &str, config: &C, module: &dyn Module) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        config,
        tensors: module.param_names(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in module.params() {
        t.write_aiat(w)?;
    }
    Ok(())
}

fn read_header<C: DeserializeOwned, R: Read>(r: &mut R, kind: &str) -> Result<Header<C>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u64(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header<C> = serde_json::from_slice(&json)?;
    if header.kind != kind {
        return Err(Error::Format(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    Ok(header)
}

fn fill_params<R: Read>(r: &mut R, names: &[String], module: &mut dyn Module) -> Result<()> {
    if names != module.param_names().as_slice() {
        return Err(Error::Format("checkpoint tensor names do not match the config".into()));
    }
    for (name, p) in names.iter().zip(module.params_mut()) {
        let t = Tensor::read_aiat(r)?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(t.data());
        p.zero_grad();
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &TransformerModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, "transformer", &model.config, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TransformerModel> {
    let mut r = BufReader::new(File::open(path)?);
    let header: Header<ModelConfig> = read_header(&mut r, "transformer")?;
    let mut model = TransformerModel::init(header.config, 0)?;
    fill_params(&mut r, &header.tensors, &mut model)?;
    Ok(model)
}

pub fn save_attack_model(path: &Path, model: &AttackModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, "attack", &model.config, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_attack_model(path: &Path) -> Result<AttackModel> {
    let mut r = BufReader::new(File::open(path)?);
    let header: Header<AttackModelConfig> = read_header(&mut r, "attack")?;
    let mut model = AttackModel::init(header.config, 0)?;
    fill_params(&mut r, &header.tensors, &mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    #[test]
    fn round_trips_both_model_kinds() {
        let dir = tempfile::tempdir().unwrap();
        for arch in Architecture::ALL {
            let cfg = ModelConfig {
                n_layers: 2,
                d_model: 8,
                n_heads: 2,
                d_ff: 12,
                vocab_size: 7,
                max_seq_len: 6,
                architecture: arch,
            };
            let m = TransformerModel::init(cfg.clone(), 17).unwrap();
            let p = dir.path().join("m.ckpt");
            save_model(&p, &m).unwrap();
            let back = load_model(&p).unwrap();
            assert_eq!(back.param_hash(), m.param_hash());
            assert!(load_attack_model(&p).is_err());

            let a = AttackModel::init(AttackModelConfig::matching(&cfg, 1), 5).unwrap();
            let p = dir.path().join("a.ckpt");
            save_attack_model(&p, &a).unwrap();
            assert_eq!(load_attack_model(&p).unwrap().param_hash(), a.param_hash());
        }
    }
}
