//! The `.birf` snapshot format.
//!
//! ```text
//! "BIRF" | version u32 | header_len u32 | header | grid payload | MLP payload
//! ```
//!
//! All integers and floats are little-endian. The header holds the full model
//! and render configuration, the two payload lengths and a CRC-32 of the
//! payload. The grid payload is one packed bit array per level (3D levels
//! ascending, then the xy, xz and yz plane stacks), each padded with zero bits
//! to a whole byte. The MLP payload stores every weight and bias of the
//! density head and then the color head, as f32 or f16.

use std::path::Path;

use half::f16;

use crate::binarize::{BinaryTensor, PackedBits};
use crate::error::{Error, FormatError, Result};
use crate::field::{FieldConfig, FieldModel};
use crate::grid::{GridConfig, GridLevelConfig, HybridGrid};
use crate::nn::{Activation, Mlp, MlpSpec};
use crate::render::SceneTransform;
use crate::sampler::OccupancyConfig;
use crate::scene::{RenderSettings, SceneModel};

pub const MAGIC: [u8; 4] = *b"BIRF";
pub const VERSION: u32 = 1;
const FLAG_F16: u32 = 1;
const PREAMBLE: usize = 12;
const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPrecision {
    #[default]
    F32,
    F16,
}

impl WeightPrecision {
    pub fn bytes(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F16 => 2,
        }
    }
}

/// Everything stored ahead of the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub precision: WeightPrecision,
    pub field: FieldConfig,
    pub density_spec: MlpSpec,
    pub color_spec: MlpSpec,
    pub transform: SceneTransform,
    pub settings: RenderSettings,
    pub grid_payload_bytes: u64,
    pub mlp_payload_bytes: u64,
    pub payload_crc: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotInfo {
    pub version: u32,
    pub header: SnapshotHeader,
    pub header_bytes: usize,
    pub file_bytes: usize,
}

/// Storage accounting for a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeReport {
    pub grid_bits: u64,
    pub grid_bytes: u64,
    pub mlp_params: u64,
    pub mlp_bytes_f32: u64,
    pub mlp_bytes_f16: u64,
    pub header_bytes: u64,
}

impl SizeReport {
    pub fn grid_mb(&self) -> f64 {
        self.grid_bits as f64 / 8.0 / BYTES_PER_MB
    }

    pub fn total_bytes(&self, precision: WeightPrecision) -> u64 {
        let mlp = match precision {
            WeightPrecision::F32 => self.mlp_bytes_f32,
            WeightPrecision::F16 => self.mlp_bytes_f16,
        };
        PREAMBLE as u64 + self.header_bytes + self.grid_bytes + mlp
    }

    pub fn total_mb(&self, precision: WeightPrecision) -> f64 {
        self.total_bytes(precision) as f64 / BYTES_PER_MB
    }
}

pub fn report_size(field: &FieldConfig) -> SizeReport {
    let levels = || field.grid.levels_3d.iter().chain((0..3).flat_map(|_| field.grid.levels_2d.iter()));
    let grid_bits: u64 = levels().map(|l| l.latent_count() as u64).sum();
    let grid_bytes: u64 = levels().map(|l| l.latent_count().div_ceil(8) as u64).sum();
    let mlp_params = (field.density_spec().param_count() + field.color_spec().param_count()) as u64;
    SizeReport {
        grid_bits,
        grid_bytes,
        mlp_params,
        mlp_bytes_f32: mlp_params * 4,
        mlp_bytes_f16: mlp_params * 2,
        header_bytes: header_len(&field.grid) as u64,
    }
}

pub fn format_bytes_mb(bytes: u64) -> f64 {
    bytes as f64 / BYTES_PER_MB
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn spec(&mut self, s: &MlpSpec) {
        self.u32(s.input_width as u32);
        self.u32(s.hidden_width as u32);
        self.u32(s.hidden_layers as u32);
        self.u32(s.output_width as u32);
        self.u8(match s.output_activation {
            Activation::None => 0,
            Activation::Sigmoid => 1,
        });
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    // offset of `buf` within the file, for error messages
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::Truncated {
                needed: self.base + self.pos + n,
                available: self.base + self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize, FormatError> {
        Ok(self.u32()? as usize)
    }
    fn spec(&mut self) -> Result<MlpSpec, FormatError> {
        Ok(MlpSpec {
            input_width: self.usize()?,
            hidden_width: self.usize()?,
            hidden_layers: self.usize()?,
            output_width: self.usize()?,
            output_activation: match self.u8()? {
                0 => Activation::None,
                1 => Activation::Sigmoid,
                other => {
                    return Err(FormatError::Header {
                        field: "output_activation",
                        reason: format!("unknown activation code {other}"),
                    })
                }
            },
        })
    }
}

fn header_len(grid: &GridConfig) -> usize {
    let levels = 8 * (grid.levels_3d.len() + grid.levels_2d.len());
    let spec = 4 * 4 + 1;
    // flags, F, two level counts, PE, hidden, embedding
    7 * 4 + levels + 2 * spec
        // transform
        + 4 * 8
        // render settings
        + 4 + 8 + 12 + 4 * 5 + 4 + 8
        // payload lengths and CRC
        + 8 + 8 + 4
}

fn write_header(h: &SnapshotHeader) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(header_len(&h.field.grid)));
    w.u32(if h.precision == WeightPrecision::F16 { FLAG_F16 } else { 0 });
    let g = &h.field.grid;
    w.u32(g.feature_dim as u32);
    w.u32(g.levels_3d.len() as u32);
    w.u32(g.levels_2d.len() as u32);
    for l in g.levels_3d.iter().chain(&g.levels_2d) {
        w.u32(l.resolution);
        w.u32(l.table_size);
    }
    w.u32(h.field.pe_frequencies as u32);
    w.u32(h.field.hidden_width as u32);
    w.u32(h.field.embedding_width as u32);
    w.spec(&h.density_spec);
    w.spec(&h.color_spec);
    w.f64(h.transform.scale);
    for v in h.transform.offset {
        w.f64(v);
    }
    let s = &h.settings;
    w.f32(s.march_step);
    w.f64(s.stop_transmittance);
    for v in s.background {
        w.f32(v);
    }
    w.u32(s.occupancy.resolution as u32);
    w.u32(s.occupancy.update_interval as u32);
    w.f32(s.occupancy.decay);
    w.f32(s.occupancy.threshold);
    w.u32(s.occupancy.warmup_iters as u32);
    w.u32(s.rebuild_passes as u32);
    w.u64(s.rebuild_seed);
    w.u64(h.grid_payload_bytes);
    w.u64(h.mlp_payload_bytes);
    w.u32(h.payload_crc);
    w.0
}

fn header_err(field: &'static str, e: impl std::fmt::Display) -> FormatError {
    FormatError::Header {
        field,
        reason: e.to_string(),
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<SnapshotHeader, FormatError> {
    let flags = r.u32()?;
    if flags & !FLAG_F16 != 0 {
        return Err(header_err("flags", format!("unknown flag bits {flags:#x}")));
    }
    let feature_dim = r.usize()?;
    let n3 = r.usize()?;
    let n2 = r.usize()?;
    if n3 + n2 > 1024 {
        return Err(header_err("levels", format!("{n3} + {n2} levels is implausible")));
    }
    let mut level = |dim| -> Result<GridLevelConfig, FormatError> {
        Ok(GridLevelConfig {
            dim,
            resolution: r.u32()?,
            table_size: r.u32()?,
            feature_dim,
        })
    };
    let levels_3d = (0..n3).map(|_| level(3)).collect::<Result<Vec<_>, _>>()?;
    let levels_2d = (0..n2).map(|_| level(2)).collect::<Result<Vec<_>, _>>()?;
    let grid = GridConfig {
        levels_3d,
        levels_2d,
        feature_dim,
    };
    grid.validate().map_err(|e| header_err("grid", e))?;
    let field = FieldConfig {
        grid,
        pe_frequencies: r.usize()?,
        hidden_width: r.usize()?,
        embedding_width: r.usize()?,
    };
    field.validate().map_err(|e| header_err("field", e))?;
    let density_spec = r.spec()?;
    let color_spec = r.spec()?;
    if density_spec != field.density_spec() {
        return Err(header_err("density_spec", "does not match the field configuration"));
    }
    if color_spec != field.color_spec() {
        return Err(header_err("color_spec", "does not match the field configuration"));
    }
    let transform = SceneTransform {
        scale: r.f64()?,
        offset: [r.f64()?, r.f64()?, r.f64()?],
    };
    let settings = RenderSettings {
        march_step: r.f32()?,
        stop_transmittance: r.f64()?,
        background: [r.f32()?, r.f32()?, r.f32()?],
        occupancy: OccupancyConfig {
            resolution: r.usize()?,
            update_interval: r.usize()?,
            decay: r.f32()?,
            threshold: r.f32()?,
            warmup_iters: r.usize()?,
        },
        rebuild_passes: r.usize()?,
        rebuild_seed: r.u64()?,
    };
    if !(settings.march_step > 0.0) || settings.occupancy.resolution == 0 {
        return Err(header_err("render settings", "march step and occupancy resolution must be positive"));
    }
    Ok(SnapshotHeader {
        precision: if flags & FLAG_F16 != 0 {
            WeightPrecision::F16
        } else {
            WeightPrecision::F32
        },
        field,
        density_spec,
        color_spec,
        transform,
        settings,
        grid_payload_bytes: r.u64()?,
        mlp_payload_bytes: r.u64()?,
        payload_crc: r.u32()?,
    })
}

/// Serialize to bytes. Only the signs of the grid latents are kept.
pub fn encode(scene: &SceneModel, precision: WeightPrecision) -> Vec<u8> {
    let field = &scene.field;
    let mut grid_payload = Vec::new();
    for t in field.grid.tensors() {
        grid_payload.extend_from_slice(&t.pack().bytes);
    }
    let mut mlp_payload = Vec::new();
    for p in field.density.params.iter().chain(&field.color.params) {
        for &v in &p.values {
            match precision {
                WeightPrecision::F32 => mlp_payload.extend_from_slice(&v.to_le_bytes()),
                WeightPrecision::F16 => mlp_payload.extend_from_slice(&f16::from_f32(v).to_le_bytes()),
            }
        }
    }
    let mut crc = crc32fast::Hasher::new();
    crc.update(&grid_payload);
    crc.update(&mlp_payload);
    let header = write_header(&SnapshotHeader {
        precision,
        field: field.config.clone(),
        density_spec: field.density.spec,
        color_spec: field.color.spec,
        transform: scene.transform,
        settings: scene.settings,
        grid_payload_bytes: grid_payload.len() as u64,
        mlp_payload_bytes: mlp_payload.len() as u64,
        payload_crc: crc.finalize(),
    });
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + grid_payload.len() + mlp_payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&grid_payload);
    out.extend_from_slice(&mlp_payload);
    out
}

/// Parse the preamble and header and verify the payload checksum, returning
/// the header and the payload slice.
fn split(bytes: &[u8]) -> Result<(SnapshotInfo, &[u8]), FormatError> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        base: 0,
    };
    let magic = r.array::<4>()?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let header_bytes = r.usize()?;
    let header_slice = r.take(header_bytes)?;
    let mut hr = Reader {
        buf: header_slice,
        pos: 0,
        base: PREAMBLE,
    };
    let header = read_header(&mut hr)?;
    if hr.pos != header_slice.len() {
        return Err(header_err("header_len", format!("{} unread header bytes", header_slice.len() - hr.pos)));
    }
    let payload_len = (header.grid_payload_bytes + header.mlp_payload_bytes) as usize;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
    }
    let found = crc32fast::hash(payload);
    if found != header.payload_crc {
        return Err(FormatError::Checksum {
            expected: header.payload_crc,
            found,
        });
    }
    Ok((
        SnapshotInfo {
            version,
            header,
            header_bytes,
            file_bytes: bytes.len(),
        },
        payload,
    ))
}

pub fn decode(bytes: &[u8]) -> Result<SceneModel> {
    let (info, payload) = split(bytes)?;
    let h = info.header;
    let (grid_bytes, mlp_bytes) = payload.split_at(h.grid_payload_bytes as usize);

    let config = h.field.grid.clone();
    let mut grid = HybridGrid::zeros(config)?;
    let mut at = 0;
    for t in grid.tensors_mut() {
        let n = t.len().div_ceil(8);
        let chunk = grid_bytes.get(at..at + n).ok_or(FormatError::PackedLength {
            bits: t.len(),
            expected: n,
            found: grid_bytes.len().saturating_sub(at),
        })?;
        let packed = PackedBits::new(t.len(), chunk.to_vec())?;
        let signs = (0..t.len()).map(|i| if packed.get(i) { 1.0 } else { -1.0 }).collect();
        *t = BinaryTensor::from_signs(&t.shape.clone(), signs);
        at += n;
    }
    if at != grid_bytes.len() {
        return Err(header_err("grid_payload_bytes", format!("expected {at}, header says {}", grid_bytes.len())).into());
    }

    let mut density = Mlp::zeros("density", h.density_spec);
    let mut color = Mlp::zeros("color", h.color_spec);
    let width = h.precision.bytes();
    let needed: usize = density.params.iter().chain(&color.params).map(|p| p.len() * width).sum();
    if needed != mlp_bytes.len() {
        return Err(header_err("mlp_payload_bytes", format!("expected {needed}, header says {}", mlp_bytes.len())).into());
    }
    let mut values = mlp_bytes.chunks_exact(width).map(|c| match h.precision {
        WeightPrecision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")),
        WeightPrecision::F16 => f16::from_le_bytes(c.try_into().expect("2 bytes")).to_f32(),
    });
    for p in density.params.iter_mut().chain(color.params.iter_mut()) {
        for v in &mut p.values {
            *v = values.next().expect("payload length checked");
        }
    }
    Ok(SceneModel {
        field: FieldModel::from_parts(h.field, grid, density, color)?,
        transform: h.transform,
        settings: h.settings,
    })
}

/// Write a snapshot; returns the number of bytes written.
pub fn save(scene: &SceneModel, path: &Path, precision: WeightPrecision) -> Result<usize> {
    let bytes = encode(scene, precision);
    std::fs::write(path, &bytes).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.len())
}

pub fn load(path: &Path) -> Result<SceneModel> {
    decode(&read_file(path)?)
}

/// Header and checksum only; the payload is not decoded.
pub fn info(path: &Path) -> Result<SnapshotInfo> {
    Ok(split(&read_file(path)?)?.0)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LevelStack;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> SceneModel {
        let grid = GridConfig::from_stacks(
            LevelStack {
                levels: 2,
                min_resolution: 4,
                max_resolution: 16,
                log2_table_size: 9,
            },
            LevelStack {
                levels: 2,
                min_resolution: 8,
                max_resolution: 32,
                log2_table_size: 8,
            },
            2,
        )
        .unwrap();
        let config = FieldConfig {
            hidden_width: 8,
            ..FieldConfig::new(grid)
        };
        SceneModel {
            field: FieldModel::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(),
            transform: SceneTransform::from_aabb(-1.5, 1.5),
            settings: RenderSettings::default(),
        }
    }

    #[test]
    fn roundtrip_keeps_signs_and_weights() {
        let s = scene(1);
        let bytes = encode(&s, WeightPrecision::F32);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.field.binarized(), s.field.binarized());
        assert_eq!(back.transform, s.transform);
        assert_eq!(back.settings, s.settings);
        assert_eq!(encode(&back, WeightPrecision::F32), bytes);
    }

    #[test]
    fn f16_roundtrip_is_close() {
        let s = scene(2);
        let bytes = encode(&s, WeightPrecision::F16);
        let back = decode(&bytes).unwrap();
        for (a, b) in back.field.density.params.iter().zip(&s.field.density.params) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= y.abs() * 1e-3 + 1e-7);
            }
        }
        assert_eq!(encode(&back, WeightPrecision::F16), bytes);
        assert!(bytes.len() < encode(&s, WeightPrecision::F32).len());
    }

    #[test]
    fn header_length_prediction_is_exact() {
        let s = scene(3);
        let bytes = encode(&s, WeightPrecision::F32);
        let r = report_size(&s.field.config);
        assert_eq!(bytes.len() as u64, r.total_bytes(WeightPrecision::F32));
        assert_eq!(encode(&s, WeightPrecision::F16).len() as u64, r.total_bytes(WeightPrecision::F16));
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let bytes = encode(&scene(4), WeightPrecision::F32);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode(&bad),
            Err(Error::Format(FormatError::Version { found: 9, expected: 1 }))
        ));
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x40;
        assert!(matches!(decode(&bad), Err(Error::Format(FormatError::Checksum { .. }))));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Format(FormatError::TrailingBytes(1)))));
    }

    #[test]
    fn info_reads_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.birf");
        let s = scene(5);
        let n = save(&s, &path, WeightPrecision::F16).unwrap();
        let i = info(&path).unwrap();
        assert_eq!(i.file_bytes, n);
        assert_eq!(i.header.precision, WeightPrecision::F16);
        assert_eq!(i.header.field, s.field.config);
        assert_eq!(load(&path).unwrap().field.grid, decode(&encode(&s, WeightPrecision::F16)).unwrap().field.grid);
    }
}
