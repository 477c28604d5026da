//! Single-file checkpoint container.
//!
//! Layout on disk:
//!
//! ```text
//! +--------------------+----------------------+-------------+------------------+
//! | magic  "QSCKPT01"  | header length u64 LE | JSON header | f32 LE blob      |
//! +--------------------+----------------------+-------------+------------------+
//! ```
//!
//! The header describes the model config, every parameter tensor (name,
//! shape, element offset into the blob), any EMA shadow tables, and the
//! training progress needed to resume. Tensors are keyed by the stable
//! hierarchical names the builders assign (`encoder.stage1.band2.conv.weight`,
//! ...), so a conditioned body and a multi-stem body can exchange weights:
//! everything outside `head.` and `film.` lines up by name.
//!
//! Parameters are stored as f32 regardless of the compute dtype; loading
//! converts to the receiving variable's dtype. Rewriting a freshly read
//! checkpoint reproduces the input byte for byte, which keeps "latest"
//! rewrites honest and makes corruption detectable by comparison.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use crate::error::{bail_data, ensure_input, Error, Result};
use crate::model::config::ModelConfig;

pub const MAGIC: &[u8; 8] = b"QSCKPT01";

/// Upper bound on the JSON header; anything larger is a corrupt length field.
const MAX_HEADER_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: u64,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One EMA shadow table. The decay is kept as the exact string it was
/// configured with ("0.999") so rewrites never reformat it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmaTable {
    pub decay: String,
    pub update_count: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BestRecord {
    /// Mean validation SNR in dB of the selected candidate.
    pub score_db: f64,
    /// Which candidate won: "raw" or "ema@<decay>".
    pub source: String,
    pub epoch: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainingProgress {
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps across all epochs.
    pub global_step: u64,
    pub samples_seen: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best: Option<BestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub params: Vec<TensorEntry>,
    pub ema: Vec<EmaTable>,
    pub progress: TrainingProgress,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    blob: Vec<f32>,
}

/// A named tensor headed into a checkpoint.
#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Snapshot a var map as name-sorted f32 tensors.
pub fn snapshot_varmap(varmap: &VarMap) -> Result<Vec<NamedTensor>> {
    let data = varmap.data().lock().unwrap();
    let mut out = Vec::with_capacity(data.len());
    for (name, var) in data.iter() {
        let t = var.as_tensor().to_dtype(DType::F32)?;
        out.push(NamedTensor {
            name: name.clone(),
            shape: t.dims().to_vec(),
            data: t.flatten_all()?.to_vec1()?,
        });
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

fn pack(tensors: Vec<NamedTensor>, blob: &mut Vec<f32>) -> Vec<TensorEntry> {
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        debug_assert_eq!(t.data.len(), t.shape.iter().product::<usize>());
        entries.push(TensorEntry { name: t.name, shape: t.shape, offset: blob.len() as u64 });
        blob.extend_from_slice(&t.data);
    }
    entries
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        params: Vec<NamedTensor>,
        ema: Vec<(String, u64, Vec<NamedTensor>)>,
        progress: TrainingProgress,
    ) -> Self {
        let mut blob = Vec::new();
        let params = pack(params, &mut blob);
        let ema = ema
            .into_iter()
            .map(|(decay, update_count, tensors)| EmaTable {
                decay,
                update_count,
                tensors: pack(tensors, &mut blob),
            })
            .collect();
        Checkpoint { header: CheckpointHeader { version: 1, model, params, ema, progress }, blob }
    }

    /// Raw values for a table entry.
    pub fn tensor_data(&self, entry: &TensorEntry) -> &[f32] {
        let start = entry.offset as usize;
        &self.blob[start..start + entry.len()]
    }

    pub fn param(&self, name: &str) -> Option<&TensorEntry> {
        self.header.params.iter().find(|e| e.name == name)
    }

    pub fn ema_table(&self, decay: &str) -> Option<&EmaTable> {
        self.header.ema.iter().find(|t| t.decay == decay)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Data(format!("checkpoint header encoding: {e}")))?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut bytes = Vec::with_capacity(self.blob.len() * 4);
        for v in &self.blob {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Checkpoint> {
        let mut r = File::open(path)?;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Data(format!("{}: too short for a checkpoint", path.display())))?;
        if &magic != MAGIC {
            bail_data!("{}: bad magic {:?}, not a checkpoint", path.display(), magic);
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::Data(format!("{}: truncated header length", path.display())))?;
        let header_len = u64::from_le_bytes(len);
        if header_len > MAX_HEADER_BYTES {
            bail_data!("{}: header length {} is implausible", path.display(), header_len);
        }
        let mut header_bytes = vec![0u8; header_len as usize];
        r.read_exact(&mut header_bytes)
            .map_err(|_| Error::Data(format!("{}: truncated header", path.display())))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Data(format!("{}: header decode: {e}", path.display())))?;
        if header.version != 1 {
            bail_data!("{}: unsupported checkpoint version {}", path.display(), header.version);
        }

        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % 4 != 0 {
            bail_data!("{}: blob length {} is not a whole number of f32", path.display(), body.len());
        }
        let blob: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let total = blob.len() as u64;
        let mut expected = 0u64;
        for entry in header.params.iter().chain(header.ema.iter().flat_map(|t| t.tensors.iter())) {
            let end = entry.offset + entry.len() as u64;
            if entry.offset != expected || end > total {
                bail_data!(
                    "{}: tensor {} spans {}..{} outside or out of order in a {}-element blob",
                    path.display(),
                    entry.name,
                    entry.offset,
                    end,
                    total
                );
            }
            expected = end;
        }
        if expected != total {
            bail_data!(
                "{}: blob holds {} elements but the table accounts for {}",
                path.display(),
                total,
                expected
            );
        }
        Ok(Checkpoint { header, blob })
    }

    /// Restore every parameter into `varmap`. The name sets must match
    /// exactly and every shape must agree; partial restores are a bug when
    /// resuming, so any discrepancy is an error.
    pub fn load_strict(&self, varmap: &VarMap) -> Result<()> {
        let data = varmap.data().lock().unwrap();
        let mut wanted: BTreeMap<&str, &candle_core::Var> =
            data.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for entry in &self.header.params {
            let Some(var) = wanted.remove(entry.name.as_str()) else {
                bail_data!("checkpoint tensor {} has no home in this model", entry.name);
            };
            ensure_input!(
                var.dims() == &entry.shape[..],
                "checkpoint tensor {} has shape {:?}, model wants {:?}",
                entry.name,
                entry.shape,
                var.dims()
            );
            set_var(var, entry, self.tensor_data(entry))?;
        }
        if let Some((name, _)) = wanted.into_iter().next() {
            bail_data!("model parameter {name} is missing from the checkpoint");
        }
        Ok(())
    }

    /// Copy every tensor whose name and shape both match; report the rest.
    /// This is the body-transfer path between conditioned and multi-stem
    /// models, whose tables differ only in `head.` fan-out and `film.`.
    pub fn load_matching(&self, varmap: &VarMap) -> Result<TransferReport> {
        let data = varmap.data().lock().unwrap();
        let mut report = TransferReport::default();
        let by_name: BTreeMap<&str, &TensorEntry> =
            self.header.params.iter().map(|e| (e.name.as_str(), e)).collect();
        for (name, var) in data.iter() {
            match by_name.get(name.as_str()) {
                None => report.model_only.push(name.clone()),
                Some(entry) if var.dims() != &entry.shape[..] => {
                    report.shape_mismatch.push(name.clone())
                }
                Some(entry) => {
                    set_var(var, entry, self.tensor_data(entry))?;
                    report.loaded.push(name.clone());
                }
            }
        }
        let have: BTreeMap<&str, ()> = data.iter().map(|(n, _)| (n.as_str(), ())).collect();
        for entry in &self.header.params {
            if !have.contains_key(entry.name.as_str()) {
                report.checkpoint_only.push(entry.name.clone());
            }
        }
        for list in [
            &mut report.loaded,
            &mut report.model_only,
            &mut report.checkpoint_only,
            &mut report.shape_mismatch,
        ] {
            list.sort();
        }
        Ok(report)
    }
}

fn set_var(var: &candle_core::Var, entry: &TensorEntry, data: &[f32]) -> Result<()> {
    let t = Tensor::from_slice(data, entry.shape.clone(), &Device::Cpu)?
        .to_dtype(var.dtype())?
        .to_device(var.device())?;
    Ok(var.set(&t)?)
}

#[derive(Debug, Default, Clone)]
pub struct TransferReport {
    pub loaded: Vec<String>,
    /// In the model but not the checkpoint (stays at its current init).
    pub model_only: Vec<String>,
    /// In the checkpoint but nowhere to go.
    pub checkpoint_only: Vec<String>,
    /// Name matched but shapes disagree; skipped.
    pub shape_mismatch: Vec<String>,
}

impl TransferReport {
    pub fn summary(&self) -> String {
        format!(
            "{} loaded, {} model-only, {} checkpoint-only, {} shape mismatches",
            self.loaded.len(),
            self.model_only.len(),
            self.checkpoint_only.len(),
            self.shape_mismatch.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{BandScheme, HeadKind};
    use crate::model::{build_with_varmap, parameter_count};
    use candle_core::DType;

    fn tiny_cfg(head: HeadKind) -> ModelConfig {
        ModelConfig {
            frame_length: 32,
            num_stages: 1,
            base_channels: 4,
            band_scheme: BandScheme {
                ratios: [0.25, 0.25, 0.5],
                strides: [1, 2, 2],
                kernel_sizes: [2, 2, 2],
                channel_growth: [1, 1, 1],
            },
            neck_blocks: 2,
            neck_hidden: 3,
            mask_kernel: 3,
            group_norm_groups: 2,
            head,
            stems: ["a", "b"].map(String::from).to_vec(),
            embedding_dim: 5,
            film_hidden: 4,
        }
    }

    fn progress() -> TrainingProgress {
        TrainingProgress {
            epoch: 3,
            global_step: 12,
            samples_seen: 96,
            seed: 7,
            best: Some(BestRecord { score_db: 4.25, source: "ema@0.99".into(), epoch: 2 }),
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(HeadKind::Conditioned);
        let (_, varmap) = build_with_varmap(&cfg, DType::F32, &Device::Cpu).unwrap();
        let params = snapshot_varmap(&varmap).unwrap();
        let shadows = snapshot_varmap(&varmap).unwrap();
        let ckpt = Checkpoint::new(
            cfg,
            params,
            vec![("0.99".into(), 3, shadows)],
            progress(),
        );

        let a = dir.path().join("a.qsckpt");
        let b = dir.path().join("b.qsckpt");
        ckpt.write_file(&a).unwrap();
        Checkpoint::read_file(&a).unwrap().write_file(&b).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn strict_load_restores_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(HeadKind::Conditioned);
        let (model_a, vm_a) = build_with_varmap(&cfg, DType::F32, &Device::Cpu).unwrap();
        let ckpt = Checkpoint::new(cfg.clone(), snapshot_varmap(&vm_a).unwrap(), vec![], progress());
        let path = dir.path().join("m.qsckpt");
        ckpt.write_file(&path).unwrap();

        let (model_b, vm_b) = build_with_varmap(&cfg, DType::F32, &Device::Cpu).unwrap();
        Checkpoint::read_file(&path).unwrap().load_strict(&vm_b).unwrap();

        let x = Tensor::randn(0f32, 1.0, (1, 4, 17, 4), &Device::Cpu).unwrap();
        let emb = Tensor::randn(0f32, 1.0, (1, 5), &Device::Cpu).unwrap();
        let ya: Vec<f32> = model_a
            .forward_conditioned(&x, &emb)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let yb: Vec<f32> = model_b
            .forward_conditioned(&x, &emb)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        for (a, b) in ya.iter().zip(&yb) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let prog = Checkpoint::read_file(&path).unwrap().header.progress;
        assert_eq!(prog, progress());
    }

    #[test]
    fn strict_load_rejects_mismatched_tables() {
        let dir = tempfile::tempdir().unwrap();
        let cond = tiny_cfg(HeadKind::Conditioned);
        let multi = tiny_cfg(HeadKind::MultiStem);
        let (_, vm_cond) = build_with_varmap(&cond, DType::F32, &Device::Cpu).unwrap();
        let ckpt = Checkpoint::new(
            cond,
            snapshot_varmap(&vm_cond).unwrap(),
            vec![],
            TrainingProgress::default(),
        );
        let path = dir.path().join("c.qsckpt");
        ckpt.write_file(&path).unwrap();

        let (_, vm_multi) = build_with_varmap(&multi, DType::F32, &Device::Cpu).unwrap();
        let err = Checkpoint::read_file(&path).unwrap().load_strict(&vm_multi).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("film") || msg.contains("head"), "unexpected: {msg}");
    }

    #[test]
    fn body_transfer_between_heads() {
        let dir = tempfile::tempdir().unwrap();
        let cond = tiny_cfg(HeadKind::Conditioned);
        let multi = tiny_cfg(HeadKind::MultiStem);
        let (_, vm_cond) = build_with_varmap(&cond, DType::F32, &Device::Cpu).unwrap();
        let ckpt = Checkpoint::new(
            cond.clone(),
            snapshot_varmap(&vm_cond).unwrap(),
            vec![],
            TrainingProgress::default(),
        );
        let path = dir.path().join("c.qsckpt");
        ckpt.write_file(&path).unwrap();

        let (_, vm_multi) = build_with_varmap(&multi, DType::F32, &Device::Cpu).unwrap();
        let report = Checkpoint::read_file(&path).unwrap().load_matching(&vm_multi).unwrap();

        // body params move over, film stays behind, head fan-out differs
        assert!(report.loaded.iter().all(|n| !n.starts_with("film.")));
        assert!(report.checkpoint_only.iter().all(|n| n.starts_with("film.")));
        assert!(!report.checkpoint_only.is_empty());
        assert_eq!(report.shape_mismatch, vec!["head.bias", "head.weight"]);
        assert!(report.model_only.is_empty());

        // every transferred value is bit-exact
        let reread = Checkpoint::read_file(&path).unwrap();
        let data = vm_multi.data().lock().unwrap();
        for name in &report.loaded {
            let want = reread.param(name).unwrap();
            let got: Vec<f32> =
                data[name].as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(got, reread.tensor_data(want));
        }
    }

    #[test]
    fn loads_into_f64_models() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(HeadKind::MultiStem);
        let (_, vm32) = build_with_varmap(&cfg, DType::F32, &Device::Cpu).unwrap();
        let ckpt =
            Checkpoint::new(cfg.clone(), snapshot_varmap(&vm32).unwrap(), vec![], TrainingProgress::default());
        let path = dir.path().join("m.qsckpt");
        ckpt.write_file(&path).unwrap();

        let (_, vm64) = build_with_varmap(&cfg, DType::F64, &Device::Cpu).unwrap();
        Checkpoint::read_file(&path).unwrap().load_strict(&vm64).unwrap();
        assert_eq!(parameter_count(&vm64), parameter_count(&vm32));
        let data = vm64.data().lock().unwrap();
        assert!(data.values().all(|v| v.dtype() == DType::F64));
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(HeadKind::MultiStem);
        let (_, vm) = build_with_varmap(&cfg, DType::F32, &Device::Cpu).unwrap();
        let ckpt =
            Checkpoint::new(cfg, snapshot_varmap(&vm).unwrap(), vec![], TrainingProgress::default());
        let path = dir.path().join("m.qsckpt");
        ckpt.write_file(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("bad_magic.qsckpt");
        let mut b = bytes.clone();
        b[0] ^= 0xff;
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(Checkpoint::read_file(&bad_magic).is_err());

        let truncated = dir.path().join("truncated.qsckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(Checkpoint::read_file(&truncated).is_err());

        let inflated = dir.path().join("inflated.qsckpt");
        let mut b = bytes.clone();
        b.extend_from_slice(&[0u8; 8]);
        std::fs::write(&inflated, &b).unwrap();
        assert!(Checkpoint::read_file(&inflated).is_err());
    }

    #[test]
    fn ema_tables_are_separate_sections() {
        let cfg = tiny_cfg(HeadKind::MultiStem);
        let (_, vm) = build_with_varmap(&cfg, DType::F32, &Device::Cpu).unwrap();
        let params = snapshot_varmap(&vm).unwrap();
        let mut half = params.clone();
        for t in &mut half {
            for v in &mut t.data {
                *v *= 0.5;
            }
        }
        let ckpt = Checkpoint::new(
            cfg,
            params.clone(),
            vec![("0.99".into(), 1, half.clone()), ("0.999".into(), 1, params.clone())],
            TrainingProgress::default(),
        );
        let table = ckpt.ema_table("0.99").unwrap();
        assert_eq!(table.update_count, 1);
        let first = &table.tensors[0];
        let raw = ckpt.param(&first.name).unwrap();
        let halved: Vec<f32> = ckpt.tensor_data(raw).iter().map(|v| v * 0.5).collect();
        assert_eq!(ckpt.tensor_data(first), &halved[..]);
        assert!(ckpt.ema_table("0.5").is_none());
    }
}
