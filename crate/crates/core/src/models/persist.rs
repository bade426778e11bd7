use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, ClassifierModel, GeneratorConfig, GeneratorModel, HeadMode};
use crate::error::CoreError;
use crate::Result;

const MAGIC: &[u8; 8] = b"WS2SM001";
const KIND_CLASSIFIER: u8 = 0;
const KIND_GENERATOR: u8 = 1;

fn head_byte(h: HeadMode) -> u8 {
    match h {
        HeadMode::Softmax => 0,
        HeadMode::Edl => 1,
    }
}

fn head_from(b: u8) -> Result<HeadMode> {
    match b {
        0 => Ok(HeadMode::Softmax),
        1 => Ok(HeadMode::Edl),
        other => Err(CoreError::ModelIo(format!("unknown head byte {other}"))),
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierSidecar {
    format: String,
    kind: String,
    config: ClassifierConfig,
    parameter_count: usize,
}

#[derive(Serialize, Deserialize)]
struct GeneratorSidecar {
    format: String,
    kind: String,
    config: GeneratorConfig,
    parameter_count: usize,
}

fn write_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(CoreError::ModelIo("truncated model file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]) as usize)
    }
}

fn sidecar_path(bin_path: &Path) -> std::path::PathBuf {
    bin_path.with_extension("json")
}

/// Writes `<path>` (flat binary) and `<path with .json>` (hyperparameters).
pub fn save_classifier(model: &ClassifierModel, bin_path: &Path) -> Result<()> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(KIND_CLASSIFIER);
    write_u32(&mut buf, c.n_features);
    write_u32(&mut buf, c.hidden);
    write_u32(&mut buf, c.n_classes);
    buf.push(head_byte(c.head));
    buf.extend_from_slice(&(model.parameter_count() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::File::create(bin_path)?.write_all(&buf)?;
    let sidecar = ClassifierSidecar {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        kind: "classifier".into(),
        config: *c,
        parameter_count: model.parameter_count(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CoreError::ModelIo(e.to_string()))?;
    fs::write(sidecar_path(bin_path), json)?;
    Ok(())
}

pub fn load_classifier(bin_path: &Path) -> Result<ClassifierModel> {
    let mut data = Vec::new();
    fs::File::open(bin_path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CoreError::ModelIo("bad magic".into()));
    }
    if r.u8()? != KIND_CLASSIFIER {
        return Err(CoreError::ModelIo("not a classifier file".into()));
    }
    let config = ClassifierConfig {
        n_features: r.u32()?,
        hidden: r.u32()?,
        n_classes: r.u32()?,
        head: head_from(r.u8()?)?,
    };
    let n = r.u64()?;
    let mut model = ClassifierModel::new(config, 0);
    if n != model.parameter_count() {
        return Err(CoreError::ModelIo(format!(
            "parameter count {n} does not match architecture"
        )));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let b = r.take(8)?;
        params.push(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]));
    }
    model.set_params(&params);
    Ok(model)
}

/// Writes `<path>` (flat binary) and `<path with .json>` (hyperparameters).
pub fn save_generator(model: &GeneratorModel, bin_path: &Path) -> Result<()> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(KIND_GENERATOR);
    write_u32(&mut buf, c.vocab);
    write_u32(&mut buf, c.embed);
    write_u32(&mut buf, c.window);
    write_u32(&mut buf, c.hidden);
    write_u32(&mut buf, c.pad_id);
    buf.push(head_byte(c.head));
    buf.extend_from_slice(&(model.parameter_count() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::File::create(bin_path)?.write_all(&buf)?;
    let sidecar = GeneratorSidecar {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        kind: "generator".into(),
        config: *c,
        parameter_count: model.parameter_count(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CoreError::ModelIo(e.to_string()))?;
    fs::write(sidecar_path(bin_path), json)?;
    Ok(())
}

pub fn load_generator(bin_path: &Path) -> Result<GeneratorModel> {
    let mut data = Vec::new();
    fs::File::open(bin_path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CoreError::ModelIo("bad magic".into()));
    }
    if r.u8()? != KIND_GENERATOR {
        return Err(CoreError::ModelIo("not a generator file".into()));
    }
    let config = GeneratorConfig {
        vocab: r.u32()?,
        embed: r.u32()?,
        window: r.u32()?,
        hidden: r.u32()?,
        pad_id: r.u32()?,
        head: head_from(r.u8()?)?,
    };
    let n = r.u64()?;
    let mut model = GeneratorModel::new(config, 0);
    if n != model.parameter_count() {
        return Err(CoreError::ModelIo(format!(
            "parameter count {n} does not match architecture"
        )));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let b = r.take(8)?;
        params.push(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]));
    }
    model.set_params(&params);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_round_trip() {
        let dir = std::env::temp_dir().join("ws2s_persist_test_cls");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        let m = ClassifierModel::new(
            ClassifierConfig {
                n_features: 3,
                hidden: 4,
                n_classes: 2,
                head: HeadMode::Edl,
            },
            42,
        );
        save_classifier(&m, &path).unwrap();
        let loaded = load_classifier(&path).unwrap();
        assert_eq!(m, loaded);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn generator_round_trip() {
        let dir = std::env::temp_dir().join("ws2s_persist_test_gen");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        let m = GeneratorModel::new(
            GeneratorConfig {
                vocab: 6,
                embed: 2,
                window: 3,
                hidden: 4,
                pad_id: 0,
                head: HeadMode::Softmax,
            },
            42,
        );
        save_generator(&m, &path).unwrap();
        let loaded = load_generator(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn rejects_wrong_kind() {
        let dir = std::env::temp_dir().join("ws2s_persist_test_kind");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        let m = ClassifierModel::new(
            ClassifierConfig {
                n_features: 2,
                hidden: 2,
                n_classes: 2,
                head: HeadMode::Softmax,
            },
            1,
        );
        save_classifier(&m, &path).unwrap();
        assert!(load_generator(&path).is_err());
    }
}
