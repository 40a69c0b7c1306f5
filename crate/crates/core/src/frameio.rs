//! Sequence containers: PNG / PPM frame directories and YUV4MPEG2 files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::inter::FlowField;

/// Offsets of the temporal window members relative to the center frame.
pub const WINDOW_OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];
/// Window slot holding the center frame.
pub const CENTER_SLOT: usize = 2;
/// Window slots of the four neighbors, in the order used by flow lists.
pub const NEIGHBOR_SLOTS: [usize; 4] = [0, 1, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequenceFormat {
    PngSeq,
    PpmSeq,
    Y4m,
}

impl SequenceFormat {
    fn extension(self) -> &'static str {
        match self {
            SequenceFormat::PngSeq => "png",
            SequenceFormat::PpmSeq => "ppm",
            SequenceFormat::Y4m => "y4m",
        }
    }

    /// Guesses the container from a path: `.y4m` files, otherwise the
    /// dominant frame extension found in the directory.
    pub fn detect(path: &Path) -> Result<Self> {
        if path.is_file() {
            return match path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("y4m") => Ok(SequenceFormat::Y4m),
                _ => Err(Error::format(path, "cannot infer container from file extension")),
            };
        }
        if !path.is_dir() {
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
                return Ok(SequenceFormat::Y4m);
            }
            return Ok(SequenceFormat::PngSeq);
        }
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let (mut png, mut ppm) = (0usize, 0usize);
        for entry in entries {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            match lower_ext(&p).as_deref() {
                Some("png") => png += 1,
                Some("ppm") | Some("pgm") => ppm += 1,
                _ => {}
            }
        }
        match (png, ppm) {
            (0, 0) => Err(Error::format(path, "no .png or .ppm frames found")),
            (p, q) if p >= q => Ok(SequenceFormat::PngSeq),
            _ => Ok(SequenceFormat::PpmSeq),
        }
    }
}

impl std::str::FromStr for SequenceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png" | "png_seq" => Ok(SequenceFormat::PngSeq),
            "ppm" | "ppm_seq" => Ok(SequenceFormat::PpmSeq),
            "y4m" => Ok(SequenceFormat::Y4m),
            other => Err(Error::param("format", format!("unknown container `{other}`"))),
        }
    }
}

/// An ordered, non-empty list of equally shaped frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    frames: Vec<Frame>,
    /// Frames per second; metadata only.
    pub frame_rate: f64,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>, frame_rate: f64) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::param("frames", "sequence is empty"))?;
        for (i, f) in frames.iter().enumerate().skip(1) {
            first.check_same_shape(f, &format!("frame {i}"))?;
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }
}

/// Five-frame temporal context `t-2 ..= t+2` with replicate-clamped edges.
///
/// `flows_to_center[k]` is defined on the center grid and points into
/// neighbor `NEIGHBOR_SLOTS[k]`, so warping that neighbor with it aligns the
/// neighbor to the center. `flows_from_center[k]` is the reverse flow, used for
/// the forward-backward occlusion test. Both start empty.
#[derive(Clone, Debug)]
pub struct FrameWindow<'a> {
    pub center_index: usize,
    pub indices: [usize; 5],
    pub members: [&'a Frame; 5],
    pub flows_to_center: Vec<FlowField>,
    pub flows_from_center: Vec<FlowField>,
}

impl<'a> FrameWindow<'a> {
    /// Window over an arbitrary slice of equally shaped frames.
    pub fn over(frames: &'a [Frame], t: usize) -> Result<Self> {
        if t >= frames.len() {
            return Err(Error::param(
                "t",
                format!("window index {t} outside sequence of length {}", frames.len()),
            ));
        }
        let last = frames.len() as isize - 1;
        let indices = WINDOW_OFFSETS.map(|o| (t as isize + o).clamp(0, last) as usize);
        Ok(Self {
            center_index: t,
            indices,
            members: indices.map(|i| &frames[i]),
            flows_to_center: Vec::new(),
            flows_from_center: Vec::new(),
        })
    }

    /// Window whose members are all the same frame (single-image use).
    pub fn replicate(frame: &'a Frame) -> Self {
        Self {
            center_index: 0,
            indices: [0; 5],
            members: [frame; 5],
            flows_to_center: Vec::new(),
            flows_from_center: Vec::new(),
        }
    }

    pub fn center(&self) -> &'a Frame {
        self.members[CENTER_SLOT]
    }

    pub fn neighbors(&self) -> [&'a Frame; 4] {
        NEIGHBOR_SLOTS.map(|s| self.members[s])
    }
}

pub fn window_at(seq: &Sequence, t: usize) -> Result<FrameWindow<'_>> {
    FrameWindow::over(seq.frames(), t)
}

pub fn read_sequence(path: &Path, format: SequenceFormat) -> Result<Sequence> {
    match format {
        SequenceFormat::Y4m => read_y4m(path),
        SequenceFormat::PngSeq | SequenceFormat::PpmSeq => {
            let files = list_frames(path, format)?;
            let mut frames = Vec::with_capacity(files.len());
            for f in &files {
                frames.push(match format {
                    SequenceFormat::PngSeq => read_png(f)?,
                    _ => read_pnm(f)?,
                });
            }
            Sequence::new(frames, 30.0).map_err(|e| e.context(path.display().to_string()))
        }
    }
}

pub fn write_sequence(seq: &Sequence, path: &Path, format: SequenceFormat) -> Result<()> {
    match format {
        SequenceFormat::Y4m => write_y4m(seq, path),
        SequenceFormat::PngSeq | SequenceFormat::PpmSeq => {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            for (i, frame) in seq.frames().iter().enumerate() {
                let file = frame_path(path, i, format);
                match format {
                    SequenceFormat::PngSeq => write_png(frame, &file)?,
                    _ => write_pnm(frame, &file)?,
                }
            }
            Ok(())
        }
    }
}

/// Path of frame `i` inside a frame directory.
pub fn frame_path(dir: &Path, i: usize, format: SequenceFormat) -> PathBuf {
    dir.join(format!("frame_{i:06}.{}", format.extension()))
}

/// Reads one PNG or PPM/PGM image.
pub fn read_image(path: &Path) -> Result<Frame> {
    match lower_ext(path).as_deref() {
        Some("png") => read_png(path),
        Some("ppm") | Some("pgm") => read_pnm(path),
        _ => Err(Error::format(path, "expected a .png, .ppm or .pgm file")),
    }
}

/// Every PNG/PPM/PGM image in a directory, in name order; sizes may differ.
pub fn read_image_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| matches!(lower_ext(p).as_deref(), Some("png" | "ppm" | "pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(dir, "no images found"));
    }
    files.iter().map(|f| read_image(f)).collect()
}

/// 8-bit container code for a sample: clamp to `[0,1]`, then `round(s * 255)`.
pub fn quantize8(s: f64) -> u8 {
    (s.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn lower_ext(p: &Path) -> Option<String> {
    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

/// Frame files sorted by the numeric value of the digits in their stem,
/// falling back to the file name for ties.
fn list_frames(dir: &Path, format: SequenceFormat) -> Result<Vec<PathBuf>> {
    let exts: &[&str] = match format {
        SequenceFormat::PngSeq => &["png"],
        _ => &["ppm", "pgm"],
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && lower_ext(p).is_some_and(|e| exts.contains(&e.as_str())))
        .collect();
    if files.is_empty() {
        return Err(Error::format(dir, format!("no .{} frames found", exts[0])));
    }
    let key = |p: &PathBuf| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let digits: String = stem.chars().filter(char::is_ascii_digit).collect();
        (digits.parse::<u64>().unwrap_or(u64::MAX), p.file_name().map(|n| n.to_owned()))
    };
    files.sort_by_key(key);
    Ok(files)
}

fn frame_from_bytes(w: usize, h: usize, channels: usize, interleaved: &[u8]) -> Frame {
    let n = w * h;
    let mut data = vec![0.0; n * channels];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * n + i] = b as f64 / 255.0;
        }
    }
    Frame::from_raw(w, h, channels, data)
}

fn frame_to_bytes(frame: &Frame) -> Vec<u8> {
    let (n, ch) = (frame.pixel_count(), frame.channels());
    let mut out = vec![0u8; n * ch];
    for c in 0..ch {
        for (i, &v) in frame.plane(c).iter().enumerate() {
            out[i * ch + c] = quantize8(v);
        }
    }
    out
}

fn read_png(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

/// Decodes an 8-bit PNG held in memory; `path` is only used in errors.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Frame> {
    use image::DynamicImage;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Ok(frame_from_bytes(w, h, 1, b.as_raw())),
        DynamicImage::ImageLumaA8(_) => {
            Ok(frame_from_bytes(w, h, 1, img.to_luma8().as_raw()))
        }
        DynamicImage::ImageRgb8(b) => Ok(frame_from_bytes(w, h, 3, b.as_raw())),
        DynamicImage::ImageRgba8(_) => Ok(frame_from_bytes(w, h, 3, img.to_rgb8().as_raw())),
        other => Err(Error::format(
            path,
            format!("unsupported bit depth / color type {:?}; require 8-bit", other.color()),
        )),
    }
}

fn write_png(frame: &Frame, path: &Path) -> Result<()> {
    let color = match frame.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::param("channels", format!("png cannot store {c} channels"))),
    };
    image::save_buffer(
        path,
        &frame_to_bytes(frame),
        frame.width() as u32,
        frame.height() as u32,
        color,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

fn read_pnm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let bad = |m: &str| Error::format(path, m.to_string());
    let channels = match token().as_deref() {
        Some("P5") => 1,
        Some("P6") => 3,
        _ => return Err(bad("not a binary PPM/PGM (P5/P6)")),
    };
    let mut num = |what: &str| -> Result<usize> {
        token().and_then(|t| t.parse().ok()).ok_or_else(|| bad(&format!("bad {what} field")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(bad(&format!("unsupported bit depth: maxval {maxval}, require 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = w * h * channels;
    if w == 0 || h == 0 || bytes.len() < start + need {
        return Err(bad("truncated raster"));
    }
    Ok(frame_from_bytes(w, h, channels, &bytes[start..start + need]))
}

fn write_pnm(frame: &Frame, path: &Path) -> Result<()> {
    let magic = if frame.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame_to_bytes(frame));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const Y4M_MAGIC: &str = "YUV4MPEG2";

fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [y, (b - y) / 1.772 + 0.5, (r - y) / 1.402 + 0.5]
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let (cb, cr) = (cb - 0.5, cr - 0.5);
    [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb]
}

fn read_y4m(path: &Path) -> Result<Sequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format(path, m);
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing Y4M header".into()))?;
    let header = String::from_utf8_lossy(&bytes[..nl]).into_owned();
    let mut fields = header.split_ascii_whitespace();
    if fields.next() != Some(Y4M_MAGIC) {
        return Err(bad("not a YUV4MPEG2 stream".into()));
    }
    let (mut w, mut h, mut rate, mut chroma) = (0usize, 0usize, 30.0, String::from("420"));
    for f in fields {
        let (tag, val) = f.split_at(1);
        match tag {
            "W" => w = val.parse().map_err(|_| bad(format!("bad width {val}")))?,
            "H" => h = val.parse().map_err(|_| bad(format!("bad height {val}")))?,
            "C" => chroma = val.to_string(),
            "F" => {
                if let Some((n, d)) = val.split_once(':') {
                    if let (Ok(n), Ok(d)) = (n.parse::<f64>(), d.parse::<f64>()) {
                        if d > 0.0 {
                            rate = n / d;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    let channels = match chroma.as_str() {
        "444" => 3,
        "mono" => 1,
        _ => return Err(bad("unsupported chroma; require 444 or mono".into())),
    };
    if w == 0 || h == 0 {
        return Err(bad("missing frame dimensions".into()));
    }
    let n = w * h;
    let mut pos = nl + 1;
    let mut frames = Vec::new();
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| pos + p)
            .ok_or_else(|| bad("truncated frame header".into()))?;
        if !bytes[pos..end].starts_with(b"FRAME") {
            return Err(bad(format!("expected FRAME marker at byte {pos}")));
        }
        pos = end + 1;
        let planes = bytes
            .get(pos..pos + n * channels)
            .ok_or_else(|| bad(format!("truncated frame {}", frames.len())))?;
        pos += n * channels;
        let s = |i: usize| planes[i] as f64 / 255.0;
        let frame = if channels == 1 {
            Frame::from_raw(w, h, 1, (0..n).map(s).collect())
        } else {
            let mut data = vec![0.0; 3 * n];
            for i in 0..n {
                let rgb = ycbcr_to_rgb(s(i), s(n + i), s(2 * n + i));
                for c in 0..3 {
                    data[c * n + i] = rgb[c];
                }
            }
            Frame::from_raw(w, h, 3, data)
        };
        frames.push(frame);
    }
    Sequence::new(frames, rate).map_err(|e| e.context(path.display().to_string()))
}

fn write_y4m(seq: &Sequence, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let chroma = if seq.channels() == 1 { "mono" } else { "444" };
    let (num, den) = rate_fraction(seq.frame_rate);
    let io = |e| Error::io(path, e);
    writeln!(
        out,
        "{Y4M_MAGIC} W{} H{} F{num}:{den} Ip A1:1 C{chroma}",
        seq.width(),
        seq.height()
    )
    .map_err(io)?;
    let n = seq.width() * seq.height();
    for frame in seq.frames() {
        out.write_all(b"FRAME\n").map_err(io)?;
        let mut planes = vec![0u8; n * frame.channels()];
        if frame.channels() == 1 {
            for (i, &v) in frame.data().iter().enumerate() {
                planes[i] = quantize8(v);
            }
        } else {
            for i in 0..n {
                let ycc = rgb_to_ycbcr(frame.plane(0)[i], frame.plane(1)[i], frame.plane(2)[i]);
                for c in 0..3 {
                    planes[c * n + i] = quantize8(ycc[c]);
                }
            }
        }
        out.write_all(&planes).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn rate_fraction(rate: f64) -> (u64, u64) {
    if rate > 0.0 && (rate - rate.round()).abs() < 1e-9 {
        (rate.round() as u64, 1)
    } else if rate > 0.0 {
        ((rate * 1001.0).round() as u64, 1001)
    } else {
        (30, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_of(n: usize) -> Sequence {
        Sequence::new((0..n).map(|i| Frame::filled(4, 4, 1, i as f64 / 20.0)).collect(), 30.0)
            .unwrap()
    }

    #[test]
    fn window_clamps_at_start() {
        let seq = seq_of(16);
        assert_eq!(window_at(&seq, 0).unwrap().indices, [0, 0, 0, 1, 2]);
        assert_eq!(window_at(&seq, 7).unwrap().indices, [5, 6, 7, 8, 9]);
        assert_eq!(window_at(&seq, 15).unwrap().indices, [13, 14, 15, 15, 15]);
    }

    #[test]
    fn window_of_single_frame_is_replicated() {
        let seq = seq_of(1);
        let w = window_at(&seq, 0).unwrap();
        assert_eq!(w.indices, [0; 5]);
        assert!(w.flows_to_center.is_empty() && w.flows_from_center.is_empty());
        assert!(window_at(&seq, 1).is_err());
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let r = Sequence::new(vec![Frame::filled(4, 4, 1, 0.0), Frame::filled(5, 4, 1, 0.0)], 30.0);
        assert!(matches!(r, Err(Error::Shape(_))));
        assert!(Sequence::new(vec![], 30.0).is_err());
    }

    #[test]
    fn quantization_rules() {
        assert_eq!(quantize8(0.5), 128);
        assert_eq!(quantize8(1.2), 255);
        assert_eq!(quantize8(-0.3), 0);
    }

    #[test]
    fn y4m_rejects_420() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.y4m");
        let mut bytes = b"YUV4MPEG2 W4 H4 F30:1 C420\nFRAME\n".to_vec();
        bytes.extend(vec![0u8; 24]);
        fs::write(&p, bytes).unwrap();
        let err = read_sequence(&p, SequenceFormat::Y4m).unwrap_err();
        assert!(err.to_string().contains("unsupported chroma; require 444 or mono"), "{err}");
    }

    #[test]
    fn ppm_rejects_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frame_000000.ppm");
        fs::write(&p, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        let err = read_sequence(dir.path(), SequenceFormat::PpmSeq).unwrap_err();
        assert!(err.to_string().contains("unsupported bit depth"), "{err}");
    }

    #[test]
    fn frames_sorted_numerically() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("f10.pgm", 10u8), ("f2.pgm", 2), ("f1.pgm", 1)] {
            let mut b = b"P5\n1 1\n255\n".to_vec();
            b.push(v);
            fs::write(dir.path().join(name), b).unwrap();
        }
        let seq = read_sequence(dir.path(), SequenceFormat::PpmSeq).unwrap();
        let got: Vec<u8> = seq.frames().iter().map(|f| quantize8(f.data()[0])).collect();
        assert_eq!(got, vec![1, 2, 10]);
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = read_sequence(Path::new("/nonexistent/dir"), SequenceFormat::PngSeq).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
