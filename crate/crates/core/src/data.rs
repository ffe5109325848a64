//! Video sequences: frame I/O, AWGN synthesis, cropping and temporal
//! mirroring.
//!
//! Frames are `[C, H, W]` tensors normalised to `[0, 1]` (clean data).
//! RGB frames have three channels; Bayer RGGB frames are single-channel
//! mosaics that are packed to four half-resolution channels only at the
//! model boundary ([`pack_bayer`] / [`unpack_bayer`]).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    #[default]
    Rgb,
    BayerRggb,
}

impl Layout {
    /// Channels of a stored frame.
    pub fn frame_channels(self) -> usize {
        match self {
            Layout::Rgb => 3,
            Layout::BayerRggb => 1,
        }
    }

    /// Channels the network sees after packing.
    pub fn network_channels(self) -> usize {
        match self {
            Layout::Rgb => 3,
            Layout::BayerRggb => 4,
        }
    }
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rgb" => Ok(Layout::Rgb),
            "bayer_rggb" | "bayer" => Ok(Layout::BayerRggb),
            other => Err(format!("unknown layout {other:?} (expected rgb or bayer_rggb)")),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Rgb => "rgb",
            Layout::BayerRggb => "bayer_rggb",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Ppm8,
    Ppm16,
    Llvt,
}

impl FrameFormat {
    fn extension(self, layout: Layout) -> &'static str {
        match (self, layout) {
            (FrameFormat::Llvt, _) => "llvt",
            (_, Layout::Rgb) => "ppm",
            (_, Layout::BayerRggb) => "pgm",
        }
    }
}

impl FromStr for FrameFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ppm8" => Ok(FrameFormat::Ppm8),
            "ppm16" => Ok(FrameFormat::Ppm16),
            "llvt" => Ok(FrameFormat::Llvt),
            other => Err(format!("unknown frame format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceMeta {
    pub source: Option<PathBuf>,
    /// Noise level (0-255 scale) when the sequence was synthesised.
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    /// Format the frames were read from.
    pub format: Option<FrameFormat>,
    /// File names the frames were read from, in frame order.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Tensor<f32>>,
    layout: Layout,
    pub meta: SequenceMeta,
}

impl VideoSequence {
    pub fn new(frames: Vec<Tensor<f32>>, layout: Layout) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Invalid("a sequence needs at least one frame".into()))?;
        let &[c, _, _] = first.dims() else {
            return Err(Error::shape(format!(
                "frames must be [C, H, W], got {:?}",
                first.dims()
            )));
        };
        if c != layout.frame_channels() {
            return Err(Error::shape(format!(
                "{layout} frames have {} channels, got {c}",
                layout.frame_channels()
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != first.dims() {
                return Err(Error::shape(format!(
                    "frame {i} has dims {:?}, frame 0 has {:?}",
                    f.dims(),
                    first.dims()
                )));
            }
        }
        Ok(VideoSequence {
            frames,
            layout,
            meta: SequenceMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: SequenceMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Tensor<f32>> {
        self.frames
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(channels, height, width)` of every frame.
    pub fn frame_dims(&self) -> (usize, usize, usize) {
        let d = self.frames[0].dims();
        (d[0], d[1], d[2])
    }

    /// New sequence with the same layout and metadata but different frames.
    pub fn replace_frames(&self, frames: Vec<Tensor<f32>>) -> Result<Self> {
        Ok(VideoSequence::new(frames, self.layout)?.with_meta(self.meta.clone()))
    }
}

/// Packs a `[1, H, W]` RGGB mosaic into `[4, H/2, W/2]` planes R, G1, G2, B.
pub fn pack_bayer(mosaic: &Tensor<f32>) -> Result<Tensor<f32>> {
    let &[1, h, w] = mosaic.dims() else {
        return Err(Error::shape(format!(
            "Bayer mosaic must be [1, H, W], got {:?}",
            mosaic.dims()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("Bayer mosaic {w}x{h} has odd extent")));
    }
    let idx = kernels::unshuffle_sources([1, 1, h, w], 2);
    Ok(Tensor::from_parts(vec![4, h / 2, w / 2], kernels::gather(mosaic.data(), &idx)))
}

/// Inverse of [`pack_bayer`].
pub fn unpack_bayer(planes: &Tensor<f32>) -> Result<Tensor<f32>> {
    let &[4, h, w] = planes.dims() else {
        return Err(Error::shape(format!(
            "packed Bayer planes must be [4, H, W], got {:?}",
            planes.dims()
        )));
    };
    let idx = kernels::unshuffle_sources([1, 1, 2 * h, 2 * w], 2);
    Ok(Tensor::from_parts(vec![1, 2 * h, 2 * w], kernels::scatter(planes.data(), &idx)))
}

/// Converts a stored frame to the `[1, C, H, W]` network input.
pub fn to_network(frame: &Tensor<f32>, layout: Layout) -> Result<Tensor<f32>> {
    let packed = match layout {
        Layout::Rgb => frame.clone(),
        Layout::BayerRggb => pack_bayer(frame)?,
    };
    let mut dims = vec![1];
    dims.extend_from_slice(packed.dims());
    packed.reshape(&dims)
}

/// Converts a `[1, C, H, W]` network output back to a stored frame.
pub fn from_network(out: &Tensor<f32>, layout: Layout) -> Result<Tensor<f32>> {
    let frame = out.reshape(&out.dims()[1..])?;
    match layout {
        Layout::Rgb => Ok(frame),
        Layout::BayerRggb => unpack_bayer(&frame),
    }
}

fn frame_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Loads every `.ppm`/`.pgm`/`.llvt` frame in `dir`, ordered by the number
/// embedded in each file name.
pub fn load_sequence(dir: &Path) -> Result<VideoSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "ppm" | "pgm" | "llvt") {
            continue;
        }
        let idx = frame_index(&path)
            .ok_or_else(|| Error::format(&path, "file name carries no frame number"))?;
        files.push((idx, path));
    }
    if files.is_empty() {
        return Err(Error::format(dir, "no .ppm, .pgm or .llvt frames found"));
    }
    files.sort();
    for pair in files.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::format(&pair[1].1, "duplicate frame number"));
        }
    }

    let mut frames = Vec::with_capacity(files.len());
    let mut names = Vec::with_capacity(files.len());
    let mut format = None;
    for (_, path) in &files {
        let (frame, fmt) = if path.extension().is_some_and(|e| e == "llvt") {
            let t = io::load_llvt(path)?;
            if t.rank() != 3 {
                return Err(Error::format(path, format!("expected a [C, H, W] tensor, got {:?}", t.dims())));
            }
            (t, FrameFormat::Llvt)
        } else {
            let img = io::load_pnm(path)?;
            let fmt = if img.bit_depth == 16 { FrameFormat::Ppm16 } else { FrameFormat::Ppm8 };
            (img.pixels, fmt)
        };
        match format {
            None => format = Some(fmt),
            Some(f) if f != fmt => {
                return Err(Error::format(path, format!("mixed formats: {fmt:?} after {f:?}")));
            }
            _ => {}
        }
        if let Some(first) = frames.first() {
            let first: &Tensor<f32> = first;
            if first.dims() != frame.dims() {
                return Err(Error::format(
                    path,
                    format!("frame dims {:?} differ from {:?}", frame.dims(), first.dims()),
                ));
            }
        }
        names.push(path.file_name().unwrap().to_string_lossy().into_owned());
        frames.push(frame);
    }
    let layout = match frames[0].dims()[0] {
        3 => Layout::Rgb,
        1 => Layout::BayerRggb,
        c => return Err(Error::format(&files[0].1, format!("unsupported channel count {c}"))),
    };
    Ok(VideoSequence::new(frames, layout)?.with_meta(SequenceMeta {
        source: Some(dir.to_path_buf()),
        format,
        names,
        ..SequenceMeta::default()
    }))
}

/// Writes frames as `{index:05}.{ext}` (or the original names when the
/// sequence was loaded from disk). Values are clamped to `[0, 1]` and
/// quantised round-half-up for the integer formats.
pub fn save_sequence(seq: &VideoSequence, dir: &Path, format: FrameFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = format.extension(seq.layout());
    for (i, frame) in seq.frames().iter().enumerate() {
        let name = match seq.meta.names.get(i) {
            Some(n) if seq.meta.names.len() == seq.len() => {
                let stem = Path::new(n).file_stem().unwrap_or_default().to_string_lossy();
                format!("{stem}.{ext}")
            }
            _ => format!("{i:05}.{ext}"),
        };
        let path = dir.join(name);
        match format {
            FrameFormat::Llvt => io::save_llvt(&path, frame)?,
            FrameFormat::Ppm8 => io::save_pnm(&path, frame, 8)?,
            FrameFormat::Ppm16 => io::save_pnm(&path, frame, 16)?,
        }
    }
    Ok(())
}

/// Deterministic generator for `(seed, stream)`; independent streams let
/// sequences be synthesised in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal samples by the Box-Muller transform.
pub struct Gaussian<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> Gaussian<R> {
    pub fn new(rng: R) -> Self {
        Gaussian { rng, spare: None }
    }

    fn unit_open(&mut self) -> f64 {
        // (0, 1]: 53 random bits, shifted off zero.
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.unit_open();
        let u2 = self.unit_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }
}

/// Adds i.i.d. `N(0, (sigma/255)^2)` noise to every sample. The result is
/// not clipped.
pub fn add_awgn(seq: &VideoSequence, sigma_255: f64, seed: u64) -> Result<VideoSequence> {
    add_awgn_stream(seq, sigma_255, seed, 0)
}

pub fn add_awgn_stream(
    seq: &VideoSequence,
    sigma_255: f64,
    seed: u64,
    stream: u64,
) -> Result<VideoSequence> {
    if !(sigma_255 >= 0.0) || !sigma_255.is_finite() {
        return Err(Error::Invalid(format!(
            "noise level must be finite and non-negative, got {sigma_255}"
        )));
    }
    let mut out = seq.clone();
    out.meta.sigma = Some(sigma_255);
    out.meta.seed = Some(seed);
    if sigma_255 == 0.0 {
        return Ok(out);
    }
    let std = sigma_255 / 255.0;
    let mut gauss = Gaussian::new(stream_rng(seed, stream));
    out.frames = seq
        .frames()
        .iter()
        .map(|f| f.map(|v| (v as f64 + std * gauss.sample()) as f32))
        .collect();
    Ok(out)
}

/// Top-left offsets `(y, x)` of a `size` x `size` crop; even when
/// `bayer_aware` so the RGGB phase is kept.
pub fn crop_offsets(
    height: usize,
    width: usize,
    size: usize,
    bayer_aware: bool,
    seed: u64,
) -> Result<(usize, usize)> {
    if size == 0 || size > height || size > width {
        return Err(Error::Invalid(format!(
            "crop size {size} does not fit in {width}x{height}"
        )));
    }
    if bayer_aware && !size.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "Bayer-preserving crops need an even size, got {size}"
        )));
    }
    let mut rng = stream_rng(seed, 1);
    let mut pick = |span: usize| {
        if bayer_aware {
            2 * rng.gen_range(0..=span / 2)
        } else {
            rng.gen_range(0..=span)
        }
    };
    let y = pick(height - size);
    let x = pick(width - size);
    Ok((y, x))
}

/// Crops every frame with one shared window.
pub fn random_crop(
    seq: &VideoSequence,
    size: usize,
    bayer_aware: bool,
    seed: u64,
) -> Result<VideoSequence> {
    let (c, h, w) = seq.frame_dims();
    let (oy, ox) = crop_offsets(h, w, size, bayer_aware, seed)?;
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let d = f.data();
            let mut out = Vec::with_capacity(c * size * size);
            for ch in 0..c {
                for y in oy..oy + size {
                    let row = (ch * h + y) * w;
                    out.extend_from_slice(&d[row + ox..row + ox + size]);
                }
            }
            Tensor::from_parts(vec![c, size, size], out)
        })
        .collect();
    seq.replace_frames(frames)
}

/// Source index of output frame `i` when a `len`-frame sequence is
/// extended by reflection without repeating the boundary frames:
/// `0, 1, .., len-1, len-2, .., 0, 1, ..`.
pub fn mirror_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

pub fn mirror_extend(seq: &VideoSequence, target_len: usize) -> Result<VideoSequence> {
    let len = seq.len();
    if target_len < len {
        return Err(Error::Invalid(format!(
            "target length {target_len} is shorter than the sequence ({len} frames)"
        )));
    }
    if len < 2 && target_len > len {
        return Err(Error::Invalid("mirroring needs at least two frames".into()));
    }
    let frames = (0..target_len)
        .map(|i| seq.frames()[mirror_index(i, len)].clone())
        .collect();
    let mut out = seq.replace_frames(frames)?;
    if !seq.meta.names.is_empty() {
        out.meta.names.clear();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub dir: PathBuf,
    pub layout: Layout,
    pub frames: usize,
}

/// Dataset manifest: one line per sequence, `id directory layout frames`,
/// `#` comments. Relative directories resolve against the manifest's own
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let &[id, dir, layout, frames] = fields.as_slice() else {
                return Err(Error::Invalid(format!(
                    "manifest line {}: expected `id directory layout frames`",
                    n + 1
                )));
            };
            let layout = layout
                .parse()
                .map_err(|e| Error::Invalid(format!("manifest line {}: {e}", n + 1)))?;
            let frames = frames
                .parse()
                .map_err(|e| Error::Invalid(format!("manifest line {}: {e}", n + 1)))?;
            let dir = Path::new(dir);
            entries.push(ManifestEntry {
                id: id.to_string(),
                dir: if dir.is_absolute() { dir.to_path_buf() } else { base.join(dir) },
                layout,
                frames,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {} {}\n", e.id, e.dir.display(), e.layout, e.frames))
            .collect()
    }

    /// Loads every listed sequence, checking layout and frame count.
    pub fn load_sequences(&self) -> Result<Vec<VideoSequence>> {
        self.entries
            .iter()
            .map(|e| {
                let seq = load_sequence(&e.dir)?;
                if seq.layout() != e.layout || seq.len() != e.frames {
                    return Err(Error::format(
                        &e.dir,
                        format!(
                            "manifest says {} frames of {}, found {} frames of {}",
                            e.frames,
                            e.layout,
                            seq.len(),
                            seq.layout()
                        ),
                    ));
                }
                Ok(seq)
            })
            .collect()
    }
}
