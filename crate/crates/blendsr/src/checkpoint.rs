//! Versioned binary checkpoint format.
//!
//! Layout: 4-byte magic, u32 LE format version, u64 LE header length, a
//! JSON header (model config, optimizer step, and a manifest listing each
//! tensor's name, shape, byte offset and element count), then the raw
//! little-endian f32 data. Round-trips are bit-exact.

use crate::error::{Error, Result};
use crate::network::{build_model, ModelConfig, ModelParams};
use crate::train::AdamState;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: [u8; 4] = *b"BSRC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    /// Optimizer step counter; 0 for an untrained or inference-only file.
    step: u64,
    /// True when Adam moment tensors follow the parameters.
    has_optimizer: bool,
    manifest: Vec<ManifestEntry>,
}

fn push_tensor(manifest: &mut Vec<ManifestEntry>, blob: &mut Vec<u8>, name: String, shape: Vec<usize>, data: &[f32]) {
    manifest.push(ManifestEntry {
        name,
        shape,
        offset: blob.len() as u64,
        len: data.len() as u64,
    });
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes the model (and optionally its Adam state) to `path`.
pub fn save(path: &Path, model: &ModelParams<f32>, state: Option<&AdamState<f32>>) -> Result<()> {
    let mut manifest = Vec::new();
    let mut blob = Vec::new();
    let mut param_names: Vec<(String, Vec<usize>)> = Vec::new();
    model.visit(&mut |name, shape, data| {
        param_names.push((name.to_string(), shape.to_vec()));
        push_tensor(&mut manifest, &mut blob, name.to_string(), shape.to_vec(), data);
    });
    if let Some(state) = state {
        if state.m.len() != param_names.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state tracks {} tensors, model has {}",
                state.m.len(),
                param_names.len()
            )));
        }
        for (i, (name, _)) in param_names.iter().enumerate() {
            push_tensor(&mut manifest, &mut blob, format!("adam.m.{name}"), vec![state.m[i].len()], &state.m[i]);
        }
        for (i, (name, _)) in param_names.iter().enumerate() {
            push_tensor(&mut manifest, &mut blob, format!("adam.v.{name}"), vec![state.v[i].len()], &state.v[i]);
        }
    }
    let header = Header {
        config: model.config,
        step: state.map_or(0, |s| s.t),
        has_optimizer: state.is_some(),
        manifest,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut bytes = Vec::with_capacity(16 + header_json.len() + blob.len());
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&blob);
    fs::write(path, bytes).map_err(|source| Error::io(path, source))
}

fn read_tensor(blob: &[u8], entry: &ManifestEntry) -> Result<Vec<f32>> {
    let start = entry.offset as usize;
    let end = start + entry.len as usize * 4;
    if end > blob.len() {
        return Err(Error::Checkpoint(format!(
            "tensor {} extends past the data section",
            entry.name
        )));
    }
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads a checkpoint back: the model, the Adam state when present, and
/// the optimizer step counter.
pub fn load(path: &Path) -> Result<(ModelParams<f32>, Option<AdamState<f32>>, u64)> {
    let bytes = fs::read(path).map_err(|source| Error::io(path, source))?;
    if bytes.len() < 16 || bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: FORMAT_VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::Checkpoint(format!("{}: truncated header", path.display())));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let blob = &bytes[16 + header_len..];

    let mut model = build_model::<f32>(&header.config, 0)?;
    let mut cursor = 0usize;
    let mut param_count = 0usize;
    let mut fill_err: Option<Error> = None;
    model.visit_mut(&mut |name, _, data| {
        if fill_err.is_some() {
            return;
        }
        let Some(entry) = header.manifest.get(cursor) else {
            fill_err = Some(Error::Checkpoint(format!("manifest ended before parameter {name}")));
            return;
        };
        if entry.name != name || entry.len as usize != data.len() {
            fill_err = Some(Error::Checkpoint(format!(
                "manifest entry {} ({} elements) does not match parameter {name} ({} elements)",
                entry.name,
                entry.len,
                data.len()
            )));
            return;
        }
        match read_tensor(blob, entry) {
            Ok(values) => data.copy_from_slice(&values),
            Err(e) => fill_err = Some(e),
        }
        cursor += 1;
        param_count += 1;
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    model.validate()?;

    let state = if header.has_optimizer {
        let rest = &header.manifest[param_count..];
        if rest.len() != 2 * param_count {
            return Err(Error::Checkpoint(format!(
                "expected {} optimizer tensors, found {}",
                2 * param_count,
                rest.len()
            )));
        }
        let mut m = Vec::with_capacity(param_count);
        let mut v = Vec::with_capacity(param_count);
        for entry in &rest[..param_count] {
            m.push(read_tensor(blob, entry)?);
        }
        for entry in &rest[param_count..] {
            v.push(read_tensor(blob, entry)?);
        }
        Some(AdamState { m, v, t: header.step })
    } else {
        None
    };
    Ok((model, state, header.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{bicubic_resize, ImageSample};
    use crate::network::count_params;
    use crate::tensor::{concat_batch, Tensor};
    use crate::train::{adam_update, l2_loss, train, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::toy(2);
        let model = build_model::<f32>(&cfg, 11).unwrap();
        let mut state = AdamState::for_model(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in state.m.iter_mut().chain(state.v.iter_mut()) {
            for v in t.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        state.t = 37;

        save(&path, &model, Some(&state)).unwrap();
        let (back, back_state, step) = load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_state.unwrap(), state);
        assert_eq!(step, 37);
        assert_eq!(back.param_count(), count_params(&cfg).unwrap());
    }

    #[test]
    fn inference_only_checkpoint_has_no_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build_model::<f32>(&ModelConfig::toy(3), 2).unwrap();
        save(&path, &model, None).unwrap();
        let (back, state, step) = load(&path).unwrap();
        assert_eq!(back, model);
        assert!(state.is_none());
        assert_eq!(step, 0);
    }

    #[test]
    fn wrong_version_is_explicit_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build_model::<f32>(&ModelConfig::toy(2), 3).unwrap();
        save(&path, &model, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, bytes).unwrap();
        match load(&path) {
            Err(Error::CheckpointVersion { found: 99, expected }) => assert_eq!(expected, FORMAT_VERSION),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn save_load_resume_reproduces_next_step() {
        // after the round trip, one further optimizer step must match the
        // uninterrupted in-memory continuation bit for bit
        let cfg = ModelConfig::toy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<ImageSample> = (0..4)
            .map(|i| {
                let hr = Tensor::from_fn(1, 3, 16, 16, |_, _, _, _| rng.gen_range(0.0f32..1.0));
                let lr = bicubic_resize(&hr, 0.5).unwrap();
                ImageSample { hr, lr, scale: 2, source_id: format!("s{i}") }
            })
            .collect();
        let tc = TrainConfig { batch_size: 4, max_epochs: 1, lr0: 1e-3, seed: 5, ..TrainConfig::default() };
        let model = build_model::<f32>(&cfg, 8).unwrap();
        let first = train(model, &samples, &[], &tc, |_, _, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.ckpt");
        save(&path, &first.model, Some(&first.state)).unwrap();
        let (restored, restored_state, _) = load(&path).unwrap();

        let lr_refs: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.lr).collect();
        let hr_refs: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.hr).collect();
        let lr_batch = concat_batch(&lr_refs).unwrap();
        let hr_batch = concat_batch(&hr_refs).unwrap();

        let step = |mut m: ModelParams<f32>, mut st: AdamState<f32>| -> (f32, ModelParams<f32>) {
            let sr = m.forward(&lr_batch).unwrap();
            let (loss, grad_sr) = l2_loss(&sr, &hr_batch).unwrap();
            let grads = m.backward(&lr_batch, &grad_sr).unwrap();
            adam_update(&mut m, &grads, &mut st, 1e-3, &tc).unwrap();
            (loss, m)
        };
        let (loss_mem, next_mem) = step(first.model.clone(), first.state.clone());
        let (loss_restored, next_restored) = step(restored, restored_state.unwrap());
        assert_eq!(loss_mem.to_bits(), loss_restored.to_bits());
        assert_eq!(next_mem, next_restored);
    }
}
