//! File formats and atomic writers.
//!
//! Tensor files (`.bsgt`): magic `BSGT`, u32 version, u32 rank (≥ 2),
//! rank×u64 dims, then float32 little-endian row-major payload.
//!
//! Checkpoints (`.bseg`): magic `BSEG`, u32 version, task tag, layer shape
//! table, float32 little-endian parameter values, Adam moments, EMA values,
//! and the training RNG state.
//!
//! Label maps travel as 16-bit single-channel PNG data regardless of the
//! file extension (`.png` for dataset ground truth, `.png16` for
//! predictions).
//!
//! Every writer goes through a temp-file-plus-rename so interrupted runs
//! never leave corrupt artifacts.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::model::{AdamState, DenoiserParams, LayerKind};
use crate::packing::TaskMode;
use crate::tensor::{BinaryMask, ImageTensor, InstanceLabelMap};

const TENSOR_MAGIC: &[u8; 4] = b"BSGT";
const TENSOR_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"BSEG";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes bytes to `path` atomically (temp file in the same directory, then
/// rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(format!(
                "truncated: need {n} more bytes, {} available",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Serializes a rank ≥ 2 tensor into the `BSGT` container.
pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Domain(format!(
            "tensor files require rank >= 2, got rank {}",
            dims.len()
        )));
    }
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::Shape {
            context: "write_tensor",
            expected: format!("{expected} values for dims {dims:?}"),
            got: format!("{}", data.len()),
        });
    }
    let mut bytes = Vec::with_capacity(12 + dims.len() * 8 + data.len() * 4);
    bytes.extend_from_slice(TENSOR_MAGIC);
    bytes.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Reads a `BSGT` container back into (dims, values).
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let buf = read_file(path)?;
    let mut r = ByteReader::new(&buf, path);
    let magic = r.take(4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {magic:?}, expected BSGT"),
        });
    }
    let version = r.u32()?;
    if version != TENSOR_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let rank = r.u32()? as usize;
    if rank < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8,
            message: format!("rank {rank} < 2"),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u64()? as usize);
    }
    let count: usize = dims.iter().product();
    let data = r.f32_vec(count)?;
    r.expect_end()?;
    Ok((dims, data))
}

/// Writes an image tensor as rank-3 dims [c, h, w] (matching the planar
/// in-memory layout, so the payload is row-major).
pub fn write_image_tensor(path: &Path, t: &ImageTensor) -> Result<()> {
    let (h, w, c) = t.shape();
    write_tensor(path, &[c, h, w], t.data())
}

/// Reads a rank-3 [c, h, w] tensor file into an image tensor.
pub fn read_image_tensor(path: &Path) -> Result<ImageTensor> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 3 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8,
            message: format!("expected rank-3 [c,h,w] image tensor, got dims {dims:?}"),
        });
    }
    ImageTensor::from_planes(dims[1], dims[2], dims[0], data)
}

fn decode_png(path: &Path) -> Result<DynamicImage> {
    let bytes = read_file(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn encode_png<P, C>(path: &Path, buf: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    C: std::ops::Deref<Target = [P::Subpixel]>,
    [P::Subpixel]: image::EncodableLayout,
{
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    atomic_write(path, &bytes.into_inner())
}

/// Reads an RGB 8-bit image (any PNG color type is converted to RGB8).
pub fn read_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode_png(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

pub fn write_rgb8(path: &Path, h: usize, w: usize, data: &[u8]) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, data.to_vec()).ok_or_else(|| Error::Shape {
            context: "write_rgb8",
            expected: format!("{} bytes", h * w * 3),
            got: format!("{}", data.len()),
        })?;
    encode_png(path, &buf)
}

/// Reads a label map from 16-bit (or 8-bit, taken verbatim) grayscale PNG
/// data.
pub fn read_label_map(path: &Path) -> Result<InstanceLabelMap> {
    let img = decode_png(path)?;
    let (data, w, h): (Vec<u32>, u32, u32) = match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            (buf.into_raw().into_iter().map(u32::from).collect(), w, h)
        }
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            (buf.into_raw().into_iter().map(u32::from).collect(), w, h)
        }
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!(
                    "label maps must be single-channel grayscale PNG, got {:?}",
                    other.color()
                ),
            })
        }
    };
    InstanceLabelMap::from_raw(h as usize, w as usize, data)
}

/// Writes a label map as 16-bit grayscale PNG data (ids above 65535 do not
/// fit the format and are rejected).
pub fn write_label_map(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    let max = labels.max_id();
    if max > u32::from(u16::MAX) {
        return Err(Error::Domain(format!(
            "label id {max} exceeds the 16-bit label map format"
        )));
    }
    let (h, w) = (labels.height(), labels.width());
    let raw: Vec<u16> = labels.data().iter().map(|&v| v as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized from the label map");
    encode_png(path, &buf)
}

/// Writes a binary mask as an 8-bit grayscale PNG (0/255).
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raw: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
            .expect("sized from the mask");
    encode_png(path, &buf)
}

/// Everything needed to resume or reuse a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub task: TaskMode,
    pub params: DenoiserParams,
    pub adam: AdamState,
    /// Number of optimizer steps taken so far.
    pub adam_steps: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

fn task_tag(task: TaskMode) -> u32 {
    match task {
        TaskMode::Multi => 0,
        TaskMode::MaskOnly => 1,
        TaskMode::RvdistOnly => 2,
    }
}

fn task_from_tag(tag: u32, path: &Path, offset: u64) -> Result<TaskMode> {
    match tag {
        0 => Ok(TaskMode::Multi),
        1 => Ok(TaskMode::MaskOnly),
        2 => Ok(TaskMode::RvdistOnly),
        other => Err(Error::Format {
            path: path.to_path_buf(),
            offset,
            message: format!("unknown task tag {other}"),
        }),
    }
}

fn kind_tag(kind: LayerKind) -> u32 {
    match kind {
        LayerKind::Conv3x3 => 0,
        LayerKind::Conv1x1 => 1,
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let n = p.len();
    let mut bytes = Vec::with_capacity(64 + n * 16);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&task_tag(ckpt.task).to_le_bytes());
    bytes.extend_from_slice(&(p.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(p.depth() as u32).to_le_bytes());
    bytes.extend_from_slice(&p.ema_decay.to_le_bytes());
    bytes.extend_from_slice(&(p.shapes().len() as u32).to_le_bytes());
    for s in p.shapes() {
        bytes.extend_from_slice(&kind_tag(s.kind).to_le_bytes());
        bytes.extend_from_slice(&(s.c_in as u32).to_le_bytes());
        bytes.extend_from_slice(&(s.c_out as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    for v in &p.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in &ckpt.adam.m {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in &ckpt.adam.v {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes.extend_from_slice(&ckpt.adam_steps.to_le_bytes());
    for v in &p.ema_values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes.extend_from_slice(&ckpt.rng_seed);
    bytes.extend_from_slice(&ckpt.rng_word_pos.to_le_bytes());
    atomic_write(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = read_file(path)?;
    let mut r = ByteReader::new(&buf, path);
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {magic:?}, expected BSEG"),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let task_off = r.pos as u64;
    let task = task_from_tag(r.u32()?, path, task_off)?;
    let width = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let ema_decay = r.f64()?;
    let mut params = DenoiserParams::new(width, depth, ema_decay).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 12,
        message: e.to_string(),
    })?;
    let n_layers = r.u32()? as usize;
    if n_layers != params.shapes().len() {
        return Err(r.fail(format!(
            "layer table has {n_layers} entries, expected {}",
            params.shapes().len()
        )));
    }
    for (i, expected) in params.shapes().to_vec().iter().enumerate() {
        let kind = r.u32()?;
        let c_in = r.u32()? as usize;
        let c_out = r.u32()? as usize;
        if kind != kind_tag(expected.kind) || c_in != expected.c_in || c_out != expected.c_out {
            return Err(r.fail(format!(
                "layer {i} shape ({kind}, {c_in}, {c_out}) disagrees with width/depth header"
            )));
        }
    }
    let count = r.u64()? as usize;
    if count != params.len() {
        return Err(r.fail(format!(
            "parameter count {count} disagrees with layer table ({})",
            params.len()
        )));
    }
    let values = r.f32_vec(count)?;
    let m = r.f32_vec(count)?;
    let v = r.f32_vec(count)?;
    let adam_steps = r.u64()?;
    let ema = r.f32_vec(count)?;
    let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let rng_word_pos = r.u128()?;
    r.expect_end()?;

    for (dst, src) in params.values.iter_mut().zip(&values) {
        *dst = *src as f64;
    }
    for (dst, src) in params.ema_values.iter_mut().zip(&ema) {
        *dst = *src as f64;
    }
    let mut adam = AdamState::new(count);
    for (dst, src) in adam.m.iter_mut().zip(&m) {
        *dst = *src as f64;
    }
    for (dst, src) in adam.v.iter_mut().zip(&v) {
        *dst = *src as f64;
    }
    Ok(Checkpoint {
        task,
        params,
        adam,
        adam_steps,
        rng_seed,
        rng_word_pos,
    })
}
