//! On-disk formats: SCT1 tensors, SCM1 checkpoints, PGM masks and renders,
//! dataset directories, and CSV/JSON/SVG reports.
//!
//! SCT1 is `"SCT1"`, a little-endian `u32` rank, one `u32` per extent, then
//! the `f32` payload in little-endian row-major order.
//!
//! SCM1 is `"SCM1"`, `u32` version, the 32-byte SHA-256 of the model config,
//! `u32` class count, `u8` head kind, a `u32`-length-prefixed JSON manifest,
//! the named tensor records (`u32` name length, name, SCT1 bytes) and a
//! trailing SHA-256 over every preceding byte.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{AnnotationMask, DeletionCurve, MetricRecord, MetricReport};
use crate::model::{HeadKind, ModelBundle, ModelConfig};
use crate::saliency::SaliencyMap;
use crate::synth::{Dataset, Normalization, Sample, Split, SynthConfig};
use crate::tensor::Tensor;
use crate::trainer::{EpochRecord, SweepTable};

pub const TENSOR_MAGIC: [u8; 4] = *b"SCT1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SCM1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Most elements a tensor file may declare.
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor with truncation diagnostics.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }
}

pub fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.numel());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    r.magic(TENSOR_MAGIC)?;
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        shape.push(r.u32()? as u64);
    }
    let count = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
    let count = match count {
        Some(c) if c <= MAX_ELEMENTS => c as usize,
        _ => return Err(Error::ExtentOverflow(shape)),
    };
    let payload = r.take(count * 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(shape.into_iter().map(|d| d as usize).collect::<Vec<_>>(), data)
}

/// Decodes one SCT1 tensor occupying all of `bytes`.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let t = read_tensor(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", bytes.len() - r.pos)));
    }
    Ok(t)
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(tensor))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read_file(path.as_ref())?)
}

/// How a checkpoint was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub variant: String,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset of the record from the start of the tensor section.
    pub offset: u64,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config_digest: String,
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub tensors: Vec<TensorEntry>,
}

fn head_code(kind: HeadKind) -> u8 {
    match kind {
        HeadKind::BlackBox => 0,
        HeadKind::SoftCam => 1,
    }
}

pub fn encode_checkpoint(model: &ModelBundle, provenance: &Provenance) -> Result<Vec<u8>> {
    let mut records = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.parameters() {
        tensors.push(TensorEntry {
            name: name.clone(),
            offset: records.len() as u64,
            shape: t.shape().to_vec(),
        });
        records.extend_from_slice(&(name.len() as u32).to_le_bytes());
        records.extend_from_slice(name.as_bytes());
        records.extend_from_slice(&encode_tensor(t));
    }
    let digest = model.config_digest();
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config_digest: digest.clone(),
        config: model.config().clone(),
        provenance: provenance.clone(),
        tensors,
    };
    let manifest = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(records.len() + manifest.len() + 128);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&hex::decode(&digest).expect("hex digest"));
    out.extend_from_slice(&(model.classes() as u32).to_le_bytes());
    out.push(head_code(model.head_kind()));
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&records);
    let trailer = Sha256::digest(&out);
    out.extend_from_slice(&trailer);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelBundle, CheckpointManifest)> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    if bytes.len() < 32 + 4 {
        return Err(Error::Truncated {
            needed: 36,
            available: bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::DigestMismatch("checkpoint content digest does not match".into()));
    }
    let mut r = Reader::new(body);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_digest = hex::encode(r.take(32)?);
    let classes = r.u32()? as usize;
    let head = r.u8()?;
    let manifest_len = r.u32()? as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(r.take(manifest_len)?)?;
    let config_digest = manifest.config.digest();
    if config_digest != header_digest || config_digest != manifest.config_digest {
        return Err(Error::DigestMismatch("model config digest does not match the header".into()));
    }
    if classes != manifest.config.classes || head != head_code(manifest.config.head) {
        return Err(Error::Format("checkpoint header disagrees with its manifest".into()));
    }
    let mut model = ModelBundle::init(manifest.config.clone())?;
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, manifest lists {}",
            names.len(),
            manifest.tensors.len()
        )));
    }
    let section = r.pos;
    for ((slot, name), entry) in model.parameters_mut().into_iter().zip(&names).zip(&manifest.tensors) {
        if r.pos - section != entry.offset as usize {
            return Err(Error::Format(format!("tensor {} is not at its indexed offset", entry.name)));
        }
        let len = r.u32()? as usize;
        let stored = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let tensor = read_tensor(&mut r)?;
        if stored != name || entry.name != *name || tensor.shape() != slot.shape() || entry.shape != slot.shape() {
            return Err(Error::Format(format!(
                "tensor {stored} {:?} does not match parameter {name} {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after tensor records".into()));
    }
    Ok((model, manifest))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ModelBundle, provenance: &Provenance) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(model, provenance)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelBundle, CheckpointManifest)> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

/// Binary 8-bit PGM (`P5`).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "one byte per pixel");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM with maxval 255, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5 PGM, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != w * h {
        return Err(Error::Format(format!("PGM payload has {} bytes, expected {}", data.len(), w * h)));
    }
    Ok((w, h, data.to_vec()))
}

pub fn mask_to_pgm(mask: &AnnotationMask) -> Vec<u8> {
    let pixels: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_pgm(mask.width(), mask.height(), &pixels)
}

pub fn pgm_to_mask(bytes: &[u8]) -> Result<AnnotationMask> {
    let (w, h, pixels) = decode_pgm(bytes)?;
    AnnotationMask::new(h, w, pixels.into_iter().map(|p| p >= 128).collect())
}

/// Diverging 8-bit rendering of a signed 2-D map: zero is mid-grey (128)
/// and `±max|v|` maps to 255 and 1.
pub fn render_map(values: &Tensor) -> Result<Vec<u8>> {
    values.expect_rank("render", "map", 2)?;
    let scale = values.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let pixels: Vec<u8> = values
        .data()
        .iter()
        .map(|&v| {
            let n = if scale > 0.0 { v / scale } else { 0.0 };
            (128.0 + 127.0 * n).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(encode_pgm(values.shape()[1], values.shape()[0], &pixels))
}

/// Sidecar metadata for an exported saliency map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMeta {
    pub method: String,
    pub class: usize,
    pub resolution: crate::saliency::Resolution,
    pub model_digest: String,
    pub sample_id: Option<usize>,
}

/// Writes `<stem>.sct`, `<stem>.json` and `<stem>.pgm`.
pub fn save_saliency(stem: impl AsRef<Path>, map: &SaliencyMap, model_digest: &str, sample_id: Option<usize>) -> Result<()> {
    let stem = stem.as_ref();
    let with = |ext: &str| {
        let mut p = stem.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    save_tensor(with(".sct"), map.values())?;
    let meta = SaliencyMeta {
        method: map.method.as_str().into(),
        class: map.class,
        resolution: map.resolution,
        model_digest: model_digest.into(),
        sample_id,
    };
    write_file(&with(".json"), &serde_json::to_vec_pretty(&meta)?)?;
    write_file(&with(".pgm"), &render_map(map.values())?)
}

/// `dataset.json` contents of an on-disk dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub classes: usize,
    pub normalization: Normalization,
    pub config: SynthConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: usize,
    split: String,
    label: usize,
    mask_file: String,
}

/// Writes `images/*.sct`, `masks/*.pgm`, `manifest.csv` and `dataset.json`.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset, config: &SynthConfig) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut rows: Vec<(Split, &Sample)> = [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .flat_map(|s| dataset.split(s).iter().map(move |x| (s, x)))
        .collect();
    rows.sort_by_key(|(_, s)| s.id);
    let mut csv = csv::Writer::from_writer(Vec::new());
    for (split, s) in rows {
        let image = format!("images/{:05}.sct", s.id);
        let mask = format!("masks/{:05}.pgm", s.id);
        save_tensor(dir.join(&image), &s.image)?;
        write_file(&dir.join(&mask), &mask_to_pgm(&s.mask))?;
        csv.serialize(ManifestRow {
            id: s.id,
            split: split.as_str().into(),
            label: s.label,
            mask_file: mask,
        })?;
    }
    let csv = csv.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_file(&dir.join("manifest.csv"), &csv)?;
    let info = DatasetInfo {
        classes: dataset.classes,
        normalization: dataset.normalization,
        config: config.clone(),
    };
    write_file(&dir.join("dataset.json"), &serde_json::to_vec_pretty(&info)?)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Dataset, DatasetInfo)> {
    let dir = dir.as_ref();
    let info: DatasetInfo = serde_json::from_slice(&read_file(&dir.join("dataset.json"))?)?;
    let manifest = read_file(&dir.join("manifest.csv"))?;
    let mut dataset = Dataset {
        classes: info.classes,
        normalization: info.normalization,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for row in csv::Reader::from_reader(manifest.as_slice()).deserialize() {
        let row: ManifestRow = row?;
        let split: Split = row.split.parse()?;
        if row.label >= info.classes {
            return Err(Error::Format(format!("sample {} has label {} >= {}", row.id, row.label, info.classes)));
        }
        let image = load_tensor(dir.join(format!("images/{:05}.sct", row.id)))?;
        let mask = pgm_to_mask(&read_file(&dir.join(&row.mask_file))?)?;
        let sample = Sample {
            id: row.id,
            image,
            label: row.label,
            mask,
        };
        match split {
            Split::Train => dataset.train.push(sample),
            Split::Val => dataset.val.push(sample),
            Split::Test => dataset.test.push(sample),
        }
    }
    Ok((dataset, info))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,ce,l1,l2,total,val_acc,val_auc,sparsity\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.loss.ce,
            r.loss.l1_penalty,
            r.loss.l2_penalty,
            r.loss.total,
            r.val_acc,
            opt(r.val_auc),
            opt(r.sparsity)
        );
    }
    out
}

/// Sweep rows in rank order with the selected row flagged.
pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("rank,lambda1,lambda2,val_acc,val_auc,sparsity,best_epoch,diverged,selected\n");
    for (rank, r) in table.ranked().into_iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            rank + 1,
            r.lambda1,
            r.lambda2,
            r.val_acc,
            opt(r.val_auc),
            opt(r.sparsity),
            r.best_epoch,
            r.diverged_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.index == table.selected
        );
    }
    out
}

pub fn metric_records_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from("sample_id,method,class,topk_prec,topk_prec_alt,ap,as,audc\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sample_id,
            r.method,
            r.class,
            opt(r.topk_prec),
            opt(r.topk_prec_alt),
            opt(r.ap),
            opt(r.as_),
            opt(r.audc)
        );
    }
    out
}

/// Parses a CSV produced by [`metric_records_csv`].
pub fn parse_metric_records(text: &str) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let field = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}")))
        }
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let int = |i: usize| row[i].parse::<usize>().map_err(|_| Error::Format(format!("bad integer {:?}", &row[i])));
        out.push(MetricRecord {
            sample_id: int(0)?,
            method: row[1].to_string(),
            class: int(2)?,
            topk_prec: field(&row[3])?,
            topk_prec_alt: field(&row[4])?,
            ap: field(&row[5])?,
            as_: field(&row[6])?,
            audc: field(&row[7])?,
        });
    }
    Ok(out)
}

pub fn report_json(report: &MetricReport) -> Result<String> {
    #[derive(Serialize)]
    struct Aggregates<'a> {
        model: &'a str,
        methods: &'a std::collections::BTreeMap<String, crate::metrics::MethodAggregate>,
    }
    Ok(serde_json::to_string_pretty(&Aggregates {
        model: &report.model,
        methods: &report.aggregates,
    })?)
}

pub fn curve_csv(curve: &DeletionCurve) -> String {
    let mut out = String::from("t,confidence,normalized\n");
    for &(t, c) in &curve.points {
        let _ = writeln!(out, "{t},{c},{}", c / curve.c0);
    }
    out
}

/// Minimal SVG line chart of mean normalised deletion curves, one polyline
/// per named series, with the x axis spanning `t = 0..=k`.
pub fn curves_svg(series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    const COLORS: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(1.0f64, f64::max);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{M} {M} V{} H{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12">patches removed</text>"#, W / 2.0 - 40.0, H - 10.0);
    let _ = writeln!(out, r#"<text x="4" y="{}" font-size="12">c/c0</text>"#, M - 10.0);
    for (i, (name, values)) in series.iter().enumerate() {
        let k = (values.len().max(2) - 1) as f64;
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                let x = M + (W - 2.0 * M) * t as f64 / k;
                let y = H - M - (H - 2.0 * M) * v / ymax;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - M - 110.0,
            M + 14.0 * (i as f64 + 1.0),
            escape_xml(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_file(path.as_ref(), bytes)
}

/// Writes a file and flushes it; used for outputs read back immediately.
pub fn write_synced(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}
