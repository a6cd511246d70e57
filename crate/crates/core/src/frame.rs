//! Uniform access to decoded RGB frames.
//!
//! Three kinds of sources are supported: a directory of still images, a
//! `framestream` v1 byte stream, and an external decoder subprocess that
//! writes a framestream to its standard output. Every source hands out
//! [`Frame`]s with strictly increasing indices and non-decreasing
//! timestamps, and signals end-of-stream with `Ok(None)`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

/// Largest accepted frame edge, in pixels.
pub const MAX_FRAME_DIM: u32 = 4096;

/// Frame rate used to synthesize timestamps when neither the source nor the
/// configuration provides one.
pub const DEFAULT_FPS: f64 = 25.0;

pub const FRAMESTREAM_MAGIC: &str = "FRAMESTREAM";

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame source not found: {0}")]
    MissingPath(PathBuf),
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot decode image {path}: {message}")]
    Undecodable { path: PathBuf, message: String },
    #[error("malformed framestream header: {0}")]
    MalformedHeader(String),
    #[error("truncated frame {index}: expected {expected} bytes, received {received}")]
    Truncated {
        index: u64,
        expected: usize,
        received: usize,
    },
    #[error("framestream declared {declared} frames but ended after {received}")]
    CountMismatch { declared: u64, received: u64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("decoder `{command}` failed: {message}")]
    Decoder { command: String, message: String },
    #[error("invalid source configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type FrameResult<T> = Result<T, FrameError>;

/// A decoded RGB24 raster.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u64,
    pub timestamp_ms: u64,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frame")
            .field("index", &self.index)
            .field("timestamp_ms", &self.timestamp_ms)
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(
        index: u64,
        timestamp_ms: u64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> FrameResult<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(FrameError::InvalidFrame(format!(
                "pixel buffer has {} bytes, {}x{} RGB needs {}",
                pixels.len(),
                width,
                height,
                expected
            )));
        }
        Ok(Self {
            index,
            timestamp_ms,
            width,
            height,
            pixels,
        })
    }

    /// A frame filled with a single colour.
    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> FrameResult<Self> {
        check_dims(width, height)?;
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(0, 0, width, height, pixels)
    }

    /// Builds a frame by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> FrameResult<Self> {
        check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(0, 0, width, height, pixels)
    }

    pub fn with_position(mut self, index: u64, timestamp_ms: u64) -> Self {
        self.index = index;
        self.timestamp_ms = timestamp_ms;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Row-major RGB24 bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn into_rgb_image(self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels)
            .expect("frame buffer length is validated on construction")
    }

    pub fn from_rgb_image(img: image::RgbImage) -> FrameResult<Self> {
        let (w, h) = img.dimensions();
        Self::new(0, 0, w, h, img.into_raw())
    }
}

fn check_dims(width: u32, height: u32) -> FrameResult<()> {
    if width == 0 || height == 0 {
        return Err(FrameError::InvalidFrame(format!(
            "empty frame {width}x{height}"
        )));
    }
    if width > MAX_FRAME_DIM || height > MAX_FRAME_DIM {
        return Err(FrameError::InvalidFrame(format!(
            "frame {width}x{height} exceeds {MAX_FRAME_DIM}x{MAX_FRAME_DIM}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    ImageDirectory,
    Framestream,
    DecoderSubprocess,
}

/// Describes where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSource {
    pub kind: SourceKind,
    /// Directory, framestream file (`-` for stdin), or decoder input.
    pub uri: String,
    #[serde(default)]
    pub fps_hint: Option<f64>,
    /// Filename globs for image directories.
    #[serde(default = "default_globs")]
    pub globs: Vec<String>,
    /// Decoder command template with an `{input}` placeholder.
    #[serde(default)]
    pub decoder_command: Option<String>,
}

fn default_globs() -> Vec<String> {
    vec!["*.png".into(), "*.jpg".into()]
}

impl FrameSource {
    pub fn image_directory(path: impl Into<String>) -> Self {
        Self::with_kind(SourceKind::ImageDirectory, path)
    }

    pub fn framestream(path: impl Into<String>) -> Self {
        Self::with_kind(SourceKind::Framestream, path)
    }

    pub fn decoder(input: impl Into<String>, command: impl Into<String>) -> Self {
        let mut s = Self::with_kind(SourceKind::DecoderSubprocess, input);
        s.decoder_command = Some(command.into());
        s
    }

    fn with_kind(kind: SourceKind, uri: impl Into<String>) -> Self {
        Self {
            kind,
            uri: uri.into(),
            fps_hint: None,
            globs: default_globs(),
            decoder_command: None,
        }
    }

    pub fn fps_hint(mut self, fps: f64) -> Self {
        self.fps_hint = Some(fps);
        self
    }

    /// Guesses the source kind from what `path` points at: a directory is an
    /// image directory, a file starting with the framestream magic is a
    /// framestream, anything else goes through `decoder_command`.
    pub fn infer(path: &Path, decoder_command: Option<&str>) -> FrameResult<Self> {
        let uri = path.to_string_lossy().into_owned();
        if path.is_dir() {
            return Ok(Self::image_directory(uri));
        }
        if !path.exists() {
            return Err(FrameError::MissingPath(path.to_path_buf()));
        }
        let mut head = [0u8; FRAMESTREAM_MAGIC.len()];
        let mut file = File::open(path).map_err(|source| FrameError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        if file.read_exact(&mut head).is_ok() && head == FRAMESTREAM_MAGIC.as_bytes() {
            return Ok(Self::framestream(uri));
        }
        match decoder_command {
            Some(cmd) => Ok(Self::decoder(uri, cmd)),
            None => Err(FrameError::Config(format!(
                "{} is not a framestream and no decoder command is configured",
                path.display()
            ))),
        }
    }

    fn fps_milli(&self) -> u64 {
        fps_to_milli(self.fps_hint.unwrap_or(DEFAULT_FPS))
    }
}

fn fps_to_milli(fps: f64) -> u64 {
    (fps * 1000.0).round().max(1.0) as u64
}

/// Milliseconds of frame `index` at `fps_milli / 1000` frames per second.
pub fn frame_timestamp_ms(index: u64, fps_milli: u64) -> u64 {
    ((index as u128 * 1_000_000) / fps_milli.max(1) as u128) as u64
}

/// A single-consumer stream of frames.
pub trait FrameStream: Send {
    /// Returns the next frame, or `Ok(None)` once the source is exhausted.
    /// After the end (or an error) every call returns `Ok(None)`.
    fn next_frame(&mut self) -> FrameResult<Option<Frame>>;

    fn collect_frames(&mut self) -> FrameResult<Vec<Frame>> {
        let mut out = Vec::new();
        while let Some(f) = self.next_frame()? {
            out.push(f);
        }
        Ok(out)
    }
}

impl<S: FrameStream + ?Sized> FrameStream for Box<S> {
    fn next_frame(&mut self) -> FrameResult<Option<Frame>> {
        (**self).next_frame()
    }
}

pub fn open_frame_source(config: &FrameSource) -> FrameResult<Box<dyn FrameStream>> {
    match config.kind {
        SourceKind::ImageDirectory => Ok(Box::new(ImageDirStream::open(config)?)),
        SourceKind::Framestream => {
            if config.uri == "-" {
                let reader = BufReader::new(io::stdin());
                return Ok(Box::new(FramestreamReader::new(reader, config.fps_hint)?));
            }
            let path = Path::new(&config.uri);
            if !path.exists() {
                return Err(FrameError::MissingPath(path.to_path_buf()));
            }
            let file = File::open(path).map_err(|source| FrameError::Unreadable {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(Box::new(FramestreamReader::new(
                BufReader::new(file),
                config.fps_hint,
            )?))
        }
        SourceKind::DecoderSubprocess => Ok(Box::new(DecoderStream::spawn(config)?)),
    }
}

/// Frames already held in memory, replayed in order.
pub struct MemoryStream {
    frames: std::vec::IntoIter<Frame>,
}

impl MemoryStream {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self {
            frames: frames.into_iter(),
        }
    }
}

impl FrameStream for MemoryStream {
    fn next_frame(&mut self) -> FrameResult<Option<Frame>> {
        Ok(self.frames.next())
    }
}

/// Still images in lexicographic filename order.
pub struct ImageDirStream {
    files: std::vec::IntoIter<PathBuf>,
    next_index: u64,
    fps_milli: u64,
    done: bool,
}

impl ImageDirStream {
    pub fn open(config: &FrameSource) -> FrameResult<Self> {
        let dir = Path::new(&config.uri);
        if !dir.is_dir() {
            return Err(FrameError::MissingPath(dir.to_path_buf()));
        }
        let patterns = config
            .globs
            .iter()
            .map(|g| glob::Pattern::new(g))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FrameError::Config(format!("bad glob: {e}")))?;
        let mut files = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|source| FrameError::Unreadable {
            path: dir.to_path_buf(),
            source,
        })?;
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if entry.file_type()?.is_file() && patterns.iter().any(|p| p.matches(&name)) {
                files.push(entry.path());
            }
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        Ok(Self {
            files: files.into_iter(),
            next_index: 0,
            fps_milli: config.fps_milli(),
            done: false,
        })
    }
}

impl FrameStream for ImageDirStream {
    fn next_frame(&mut self) -> FrameResult<Option<Frame>> {
        if self.done {
            return Ok(None);
        }
        let Some(path) = self.files.next() else {
            self.done = true;
            return Ok(None);
        };
        let decoded = image::open(&path).map_err(|e| {
            self.done = true;
            FrameError::Undecodable {
                path: path.clone(),
                message: e.to_string(),
            }
        })?;
        let index = self.next_index;
        let frame = Frame::from_rgb_image(decoded.to_rgb8())
            .inspect_err(|_| self.done = true)?
            .with_position(index, frame_timestamp_ms(index, self.fps_milli));
        self.next_index += 1;
        Ok(Some(frame))
    }
}

/// Parsed `FRAMESTREAM 1 <w> <h> <fps_milli> <count>` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramestreamHeader {
    pub width: u32,
    pub height: u32,
    pub fps_milli: u64,
    /// `None` when the header says `-1`.
    pub count: Option<u64>,
}

impl FramestreamHeader {
    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }

    pub fn to_line(&self) -> String {
        let count = self
            .count
            .map_or_else(|| "-1".to_string(), |c| c.to_string());
        format!(
            "{FRAMESTREAM_MAGIC} 1 {} {} {} {count}\n",
            self.width, self.height, self.fps_milli
        )
    }

    pub fn parse(line: &str) -> FrameResult<Self> {
        let bad = |msg: &str| FrameError::MalformedHeader(format!("{msg}: {:?}", line.trim_end()));
        let fields: Vec<&str> = line.trim_end_matches('\n').split(' ').collect();
        if fields.len() != 6 || fields[0] != FRAMESTREAM_MAGIC {
            return Err(bad("expected `FRAMESTREAM 1 <w> <h> <fps_milli> <count>`"));
        }
        if fields[1] != "1" {
            return Err(bad("unsupported version"));
        }
        let width: u32 = fields[2].parse().map_err(|_| bad("bad width"))?;
        let height: u32 = fields[3].parse().map_err(|_| bad("bad height"))?;
        let fps_milli: u64 = fields[4].parse().map_err(|_| bad("bad fps_milli"))?;
        let count = match fields[5] {
            "-1" => None,
            c => Some(c.parse::<u64>().map_err(|_| bad("bad count"))?),
        };
        check_dims(width, height).map_err(|e| bad(&e.to_string()))?;
        Ok(Self {
            width,
            height,
            fps_milli,
            count,
        })
    }
}

/// Reads framestream v1 from any byte source.
pub struct FramestreamReader<R> {
    reader: R,
    header: FramestreamHeader,
    fps_milli: u64,
    next_index: u64,
    done: bool,
}

impl<R: BufRead> FramestreamReader<R> {
    /// Reads the header line. `fps_hint` only applies when the header
    /// carries `fps_milli = 0`.
    pub fn new(mut reader: R, fps_hint: Option<f64>) -> FrameResult<Self> {
        let mut line = Vec::new();
        // The header is short; refuse to buffer an arbitrarily long first line.
        (&mut reader).take(256).read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(FrameError::MalformedHeader(if line.is_empty() {
                "empty stream".into()
            } else {
                "header line not terminated".into()
            }));
        }
        let text = std::str::from_utf8(&line)
            .map_err(|_| FrameError::MalformedHeader("header is not ASCII".into()))?;
        let header = FramestreamHeader::parse(text)?;
        let fps_milli = if header.fps_milli > 0 {
            header.fps_milli
        } else {
            fps_to_milli(fps_hint.unwrap_or(DEFAULT_FPS))
        };
        Ok(Self {
            reader,
            header,
            fps_milli,
            next_index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> FramestreamHeader {
        self.header
    }

    fn read_payload(&mut self) -> FrameResult<Option<Vec<u8>>> {
        let expected = self.header.frame_bytes();
        let mut buf = vec![0u8; expected];
        let mut filled = 0;
        while filled < expected {
            match self.reader.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled < expected {
            return Err(FrameError::Truncated {
                index: self.next_index,
                expected,
                received: filled,
            });
        }
        Ok(Some(buf))
    }
}

impl<R: BufRead + Send> FrameStream for FramestreamReader<R> {
    fn next_frame(&mut self) -> FrameResult<Option<Frame>> {
        if self.done {
            return Ok(None);
        }
        if let Some(count) = self.header.count {
            if self.next_index == count {
                self.done = true;
                return Ok(None);
            }
        }
        let payload = match self.read_payload() {
            Ok(p) => p,
            Err(e) => {
                self.done = true;
                return Err(e);
            }
        };
        let Some(pixels) = payload else {
            self.done = true;
            return match self.header.count {
                Some(declared) => Err(FrameError::CountMismatch {
                    declared,
                    received: self.next_index,
                }),
                None => Ok(None),
            };
        };
        let index = self.next_index;
        self.next_index += 1;
        let frame = Frame::new(
            index,
            frame_timestamp_ms(index, self.fps_milli),
            self.header.width,
            self.header.height,
            pixels,
        )?;
        Ok(Some(frame))
    }
}

/// Writes `frames` as framestream v1. All frames must share one size.
pub fn write_framestream<W: Write>(
    mut out: W,
    frames: &[Frame],
    fps_milli: u64,
    declare_count: bool,
) -> FrameResult<()> {
    let first = frames
        .first()
        .ok_or_else(|| FrameError::InvalidFrame("cannot write an empty framestream".into()))?;
    let header = FramestreamHeader {
        width: first.width,
        height: first.height,
        fps_milli,
        count: declare_count.then_some(frames.len() as u64),
    };
    out.write_all(header.to_line().as_bytes())?;
    for f in frames {
        if (f.width, f.height) != (first.width, first.height) {
            return Err(FrameError::InvalidFrame(format!(
                "frame {} is {}x{}, stream is {}x{}",
                f.index, f.width, f.height, first.width, first.height
            )));
        }
        out.write_all(&f.pixels)?;
    }
    out.flush()?;
    Ok(())
}

/// Runs an external decoder and reads the framestream it prints.
pub struct DecoderStream {
    command: String,
    child: Child,
    inner: Option<FramestreamReader<BufReader<ChildStdout>>>,
    done: bool,
}

impl DecoderStream {
    pub fn spawn(config: &FrameSource) -> FrameResult<Self> {
        let template = config
            .decoder_command
            .as_deref()
            .ok_or_else(|| FrameError::Config("decoder source without a command".into()))?;
        let argv: Vec<String> = template
            .split_whitespace()
            .map(|arg| arg.replace("{input}", &config.uri))
            .collect();
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| FrameError::Config("empty decoder command".into()))?;
        let decoder_err = |message: String| FrameError::Decoder {
            command: template.to_string(),
            message,
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| decoder_err(format!("spawn failed: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let inner = match FramestreamReader::new(BufReader::new(stdout), config.fps_hint) {
            Ok(r) => r,
            Err(e) => {
                let status = child.wait()?;
                return Err(if status.success() {
                    e
                } else {
                    decoder_err(format!("exited with {status} before the first frame"))
                });
            }
        };
        Ok(Self {
            command: template.to_string(),
            child,
            inner: Some(inner),
            done: false,
        })
    }
}

impl FrameStream for DecoderStream {
    fn next_frame(&mut self) -> FrameResult<Option<Frame>> {
        if self.done {
            return Ok(None);
        }
        let inner = self.inner.as_mut().expect("reader present until done");
        let first = inner.next_index == 0;
        match inner.next_frame() {
            Ok(Some(f)) => Ok(Some(f)),
            other => {
                self.done = true;
                self.inner = None;
                let status = self.child.wait()?;
                if first && !status.success() {
                    return Err(FrameError::Decoder {
                        command: self.command.clone(),
                        message: format!("exited with {status} before the first frame"),
                    });
                }
                other
            }
        }
    }
}

impl Drop for DecoderStream {
    fn drop(&mut self) {
        if !self.done {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}
