//! The WAVELGN1 container: one binary file for banks, model checkpoints and
//! scaler sets.
//!
//! Layout:
//!   bytes 0..8    magic "WAVELGN1" (trailing ASCII digit is the version)
//!   bytes 8..12   u32 LE header length H
//!   bytes 12..12+H  UTF-8 JSON header (format_version, kind, meta, manifest)
//!   payload       raw little-endian IEEE f32, tensors in manifest order
//!   last 4 bytes  u32 LE CRC-32 of the payload bytes
//!
//! Values are stored as f32; loading widens back to f64, so objects that
//! were quantized through f32 round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    scaler_shapes_raw, BankCounts, LayerScalers, Provenance, ScalerSet, SlotShape, TemplateBank,
    WeightSlot,
};
use crate::error::{Error, FormatError, Result};
use crate::kron::{Scaler, Template};
use crate::tensor::Matrix;
use crate::vit::{ModelConfig, ModelParams};

pub const CONTAINER_MAGIC: [u8; 8] = *b"WAVELGN1";
const FORMAT_VERSION: u32 = 1;

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB88320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = build_crc_table();

/// CRC-32 (IEEE, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

fn encode_container(
    kind: &str,
    meta: serde_json::Value,
    tensors: &[(String, &Matrix)],
) -> Result<Vec<u8>> {
    let manifest: Vec<ManifestEntry> = tensors
        .iter()
        .map(|(name, m)| ManifestEntry { name: name.clone(), rows: m.rows(), cols: m.cols() })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        meta,
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| FormatError::Metadata(e.to_string()))?;
    let payload_len: usize = tensors.iter().map(|(_, m)| m.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_bytes.len() + payload_len + 4);
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, m) in tensors {
        for v in m.as_slice() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let crc = crc32(&out[12 + header_bytes.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn decode_container(bytes: &[u8]) -> Result<(Header, Vec<Matrix>)> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated("shorter than the fixed header".into()).into());
    }
    if bytes[..7] != CONTAINER_MAGIC[..7] || !bytes[7].is_ascii_digit() {
        return Err(FormatError::Magic.into());
    }
    if bytes[7] != CONTAINER_MAGIC[7] {
        return Err(FormatError::Version { found: (bytes[7] - b'0') as u32 }.into());
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize.checked_add(header_len).ok_or(FormatError::Truncated(
        "header length overflows".into(),
    ))?;
    if bytes.len() < header_end + 4 {
        return Err(FormatError::Truncated("header runs past end of file".into()).into());
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| FormatError::Metadata(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(FormatError::Version { found: header.format_version }.into());
    }
    let payload_len: usize = header.manifest.iter().map(|e| e.rows * e.cols * 4).sum();
    let want_total = header_end + payload_len + 4;
    if bytes.len() < want_total {
        return Err(FormatError::Truncated(format!(
            "payload needs {} bytes, file holds {}",
            payload_len,
            bytes.len().saturating_sub(header_end + 4)
        ))
        .into());
    }
    if bytes.len() > want_total {
        return Err(FormatError::Truncated(format!(
            "{} unexpected trailing bytes",
            bytes.len() - want_total
        ))
        .into());
    }
    let payload = &bytes[header_end..header_end + payload_len];
    let stored = u32::from_le_bytes(bytes[want_total - 4..].try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let mut tensors = Vec::with_capacity(header.manifest.len());
    let mut off = 0;
    for entry in &header.manifest {
        let n = entry.rows * entry.cols;
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let b: [u8; 4] = payload[off + i * 4..off + i * 4 + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(b) as f64);
        }
        off += n * 4;
        tensors.push(Matrix::from_vec(entry.rows, entry.cols, data)?);
    }
    Ok((header, tensors))
}

/// Writes bytes to a temp file in the same directory, then renames over the
/// target, so readers never observe a half-written container.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    template_size: usize,
    counts: BankCounts,
    seed: u64,
    provenance: Option<Provenance>,
}

/// Serializes a bank to container bytes. Template values pass through f32.
pub fn encode_bank(bank: &TemplateBank) -> Result<Vec<u8>> {
    let meta = BankMeta {
        template_size: bank.template_size(),
        counts: bank.counts(),
        seed: bank.seed,
        provenance: bank.provenance.clone(),
    };
    let meta = serde_json::to_value(&meta).map_err(|e| FormatError::Metadata(e.to_string()))?;
    encode_container("bank", meta, &bank.tensors())
}

pub fn decode_bank(bytes: &[u8]) -> Result<TemplateBank> {
    let (header, tensors) = decode_container(bytes)?;
    if header.kind != "bank" {
        return Err(FormatError::Metadata(format!(
            "expected a bank container, found kind '{}'",
            header.kind
        ))
        .into());
    }
    let meta: BankMeta = serde_json::from_value(header.meta)
        .map_err(|e| FormatError::Metadata(e.to_string()))?;
    let total = meta.counts.att + meta.counts.proj + meta.counts.mlp;
    if header.manifest.len() != total {
        return Err(FormatError::Metadata(format!(
            "manifest holds {} tensors, counts say {total}",
            header.manifest.len()
        ))
        .into());
    }
    let mut iter = header.manifest.iter().zip(tensors);
    let mut take = |prefix: &str, n: usize| -> Result<Vec<Template>> {
        let mut group = Vec::with_capacity(n);
        for i in 0..n {
            let (entry, m) = iter.next().expect("manifest length checked above");
            let want = format!("{prefix}.{i}");
            if entry.name != want {
                return Err(FormatError::Metadata(format!(
                    "manifest entry '{}' where '{want}' was expected",
                    entry.name
                ))
                .into());
            }
            group.push(Template(m));
        }
        Ok(group)
    };
    let att = take("att", meta.counts.att)?;
    let proj = take("proj", meta.counts.proj)?;
    let mlp = take("mlp", meta.counts.mlp)?;
    TemplateBank::new(meta.template_size, att, proj, mlp, meta.seed, meta.provenance)
}

pub fn save_bank(path: &Path, bank: &TemplateBank) -> Result<()> {
    write_atomic(path, &encode_bank(bank)?)
}

pub fn load_bank(path: &Path) -> Result<TemplateBank> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}

/// Describes the model stored in a checkpoint container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// How the parameters were produced ("he_init", "wave", "teacher", ...).
    pub method: String,
    pub seed: u64,
}

pub fn encode_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    params.validate(&meta.config)?;
    let meta_json =
        serde_json::to_value(meta).map_err(|e| FormatError::Metadata(e.to_string()))?;
    encode_container("checkpoint", meta_json, &params.tensors())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    let (header, tensors) = decode_container(bytes)?;
    if header.kind != "checkpoint" {
        return Err(FormatError::Metadata(format!(
            "expected a checkpoint container, found kind '{}'",
            header.kind
        ))
        .into());
    }
    let meta: CheckpointMeta = serde_json::from_value(header.meta)
        .map_err(|e| FormatError::Metadata(e.to_string()))?;
    meta.config.validate()?;
    let mut params = ModelParams::zeros(&meta.config);
    {
        let slots = params.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(FormatError::Metadata(format!(
                "manifest holds {} tensors, config needs {}",
                tensors.len(),
                slots.len()
            ))
            .into());
        }
        for (slot, m) in slots.into_iter().zip(tensors) {
            *slot = m;
        }
    }
    // Names and shapes must match the canonical enumeration.
    for ((want_name, want), entry) in params.tensors().iter().zip(&header.manifest) {
        if *want_name != entry.name {
            return Err(FormatError::Metadata(format!(
                "manifest entry '{}' where '{want_name}' was expected",
                entry.name
            ))
            .into());
        }
        if want.shape() != (entry.rows, entry.cols) {
            return Err(Error::Shape(format!(
                "tensor {want_name} is {}x{}, config expects {}x{}",
                entry.rows,
                entry.cols,
                want.rows(),
                want.cols()
            )));
        }
    }
    params.validate(&meta.config)?;
    Ok((params, meta))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Describes the (bank, target) pairing a scaler set was fit for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalersMeta {
    pub config: ModelConfig,
    pub template_size: usize,
    pub counts: BankCounts,
    pub seed: u64,
}

pub fn encode_scalers(set: &ScalerSet, meta: &ScalersMeta) -> Result<Vec<u8>> {
    let meta_json =
        serde_json::to_value(meta).map_err(|e| FormatError::Metadata(e.to_string()))?;
    encode_container("scalers", meta_json, &set.tensors())
}

pub fn decode_scalers(bytes: &[u8]) -> Result<(ScalerSet, ScalersMeta)> {
    let (header, tensors) = decode_container(bytes)?;
    if header.kind != "scalers" {
        return Err(FormatError::Metadata(format!(
            "expected a scalers container, found kind '{}'",
            header.kind
        ))
        .into());
    }
    let meta: ScalersMeta = serde_json::from_value(header.meta)
        .map_err(|e| FormatError::Metadata(e.to_string()))?;
    meta.config.validate()?;
    let shapes = scaler_shapes_raw(meta.template_size, meta.counts, &meta.config)?;
    let per_layer: usize = WeightSlot::ALL.iter().map(|s| shapes.slot(*s).count).sum();
    if header.manifest.len() != per_layer * meta.config.depth {
        return Err(FormatError::Metadata(format!(
            "manifest holds {} tensors, target needs {}",
            header.manifest.len(),
            per_layer * meta.config.depth
        ))
        .into());
    }
    let mut iter = header.manifest.iter().zip(tensors);
    let mut layers = Vec::with_capacity(meta.config.depth);
    for l in 0..meta.config.depth {
        let mut take = |slot: WeightSlot, sh: SlotShape| -> Result<Vec<Scaler>> {
            let mut group = Vec::with_capacity(sh.count);
            for i in 0..sh.count {
                let (entry, m) = iter.next().expect("manifest length checked above");
                let want = format!("layer{l}.{}.{i}", slot.name());
                if entry.name != want {
                    return Err(FormatError::Metadata(format!(
                        "manifest entry '{}' where '{want}' was expected",
                        entry.name
                    ))
                    .into());
                }
                if m.shape() != (sh.s1, sh.s2) {
                    return Err(Error::Shape(format!(
                        "scaler {want} is {}x{}, expected {}x{}",
                        m.rows(),
                        m.cols(),
                        sh.s1,
                        sh.s2
                    )));
                }
                group.push(Scaler(m));
            }
            Ok(group)
        };
        layers.push(LayerScalers {
            qkv: take(WeightSlot::Qkv, shapes.qkv)?,
            proj: take(WeightSlot::Proj, shapes.proj)?,
            fc1: take(WeightSlot::Fc1, shapes.fc1)?,
            fc2: take(WeightSlot::Fc2, shapes.fc2)?,
        });
    }
    Ok((ScalerSet { layers }, meta))
}

pub fn save_scalers(path: &Path, set: &ScalerSet, meta: &ScalersMeta) -> Result<()> {
    write_atomic(path, &encode_scalers(set, meta)?)
}

pub fn load_scalers(path: &Path) -> Result<(ScalerSet, ScalersMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scalers(&bytes)
}
