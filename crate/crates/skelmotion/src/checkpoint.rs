//! Versioned binary checkpoints: a config echo plus every named tensor
//! (parameters and batch-norm running statistics) with exact f64 bits, so
//! save -> load -> save is byte-identical.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;

const MAGIC: &[u8; 8] = b"SKELCKPT";
const VERSION: u32 = 1;

pub fn save_store(store: &ParamStore, config_text: &str, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_text.as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value, trainable) in store.iter() {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(u8::from(trainable));
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for d in value.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

pub fn load_store(path: &Path) -> Result<(ParamStore, String)> {
    let buf = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} unsupported (expected {})",
            path.display(),
            version,
            VERSION
        )));
    }
    let cfg_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|e| Error::Checkpoint(format!("{}: config echo not UTF-8: {e}", path.display())))?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("{}: name not UTF-8: {e}", path.display())))?;
        let trainable = r.u8()? != 0;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("{}: `{name}`: {e}", path.display())))?;
        if trainable {
            store.insert(name, tensor);
        } else {
            store.insert_buffer(name, tensor);
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            buf.len() - r.pos
        )));
    }
    Ok((store, config_text))
}

/// Save a model: its resolved config echo plus every tensor.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    save_store(&model.store, &model.cfg.to_canonical_text(), path)
}

/// Rebuild a model from a checkpoint. The embedded config echo is
/// authoritative for the model shape; the weights replace the fresh
/// initialization.
pub fn load_model(path: &Path) -> Result<Model> {
    let (store, config_text) = load_store(path)?;
    let cfg = RunConfig::from_text(&config_text, path.parent().unwrap_or(Path::new(".")))
        .map_err(|e| Error::Checkpoint(format!("{}: bad config echo: {e}", path.display())))?;
    let mut model = Model::new(&cfg, cfg.seed)?;
    // Every parameter the model expects must be present with the right shape.
    for (name, value, _) in model.store.iter() {
        match store.get(name) {
            Some(loaded) if loaded.shape() == value.shape() => {}
            Some(loaded) => {
                return Err(Error::Checkpoint(format!(
                    "{}: `{name}` has shape {:?}, model expects {:?}",
                    path.display(),
                    loaded.shape(),
                    value.shape()
                )))
            }
            None => {
                return Err(Error::Checkpoint(format!(
                    "{}: missing tensor `{name}`",
                    path.display()
                )))
            }
        }
    }
    model.store = store;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny_model() -> Model {
        let mut cfg = RunConfig::profile("synthetic").unwrap();
        cfg.input_len = 8;
        cfg.pred_len = 4;
        cfg.channels = 8;
        cfg.heads = 2;
        cfg.blocks = 1;
        cfg.latent_dim = 4;
        cfg.decoder_dim = 8;
        cfg.hidden = 8;
        cfg.classes = 2;
        Model::new(&cfg, 42).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = tiny_model();
        save_model(&model, &p1).unwrap();
        let loaded = load_model(&p1).unwrap();
        save_model(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn loaded_model_reproduces_outputs() {
        use crate::skeldata::{preprocess, synthesize_sequence, SynthClass, SynthConfig};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny_model();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let synth = SynthConfig {
            frames: 12,
            ..Default::default()
        };
        let seq = synthesize_sequence(SynthClass::Stable, 1, &synth).unwrap();
        let (obs, _) = preprocess(&seq.window(0, 8).unwrap()).unwrap();
        let a = model.classify(&obs, 0).unwrap();
        let b = loaded.classify(&obs, 0).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxx").unwrap();
        assert!(matches!(load_store(&path), Err(Error::Checkpoint(_))));

        let model = tiny_model();
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // corrupt the version field
        std::fs::write(&path, &bytes).unwrap();
        let err = load_store(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
