//! Labeled video samples, the FPV1 on-disk format, the dataset manifest,
//! and balanced dataset generation.
//!
//! FPV1, little-endian: magic `FPV1` | u32 T | u32 W | u32 H | u8 label
//! (0 = failure, 1 = success) | `T*W*H*3` bytes of RGB, row-major within a
//! frame, frame-major overall.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::render::{frame_to_rgb8, rgb8_to_frame};
use super::template::{label_task, run_task, TaskTemplate};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

pub const FPV1_MAGIC: &[u8; 4] = b"FPV1";

/// Retry budget per accepted sample during balanced generation.
const MAX_ATTEMPTS_PER_SAMPLE: u64 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Failure,
    Success,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Failure => 0,
            Label::Success => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Failure),
            1 => Ok(Label::Success),
            other => Err(Error::format(format!("bad label byte {other}"))),
        }
    }

    pub fn is_success(self) -> bool {
        self == Label::Success
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Failure => "failure",
            Label::Success => "success",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "failure" => Ok(Label::Failure),
            "success" => Ok(Label::Success),
            other => Err(Error::format(format!("bad label {other:?}"))),
        }
    }
}

/// T frames of H x W RGB (8-bit) plus the outcome label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub frames_total: usize,
    pub width: usize,
    pub height: usize,
    pub label: Label,
    pub template_id: u32,
    pub seed: u64,
    /// `T*H*W*3` bytes, frame-major, rows within a frame, RGB interleaved.
    payload: Vec<u8>,
}

impl VideoSample {
    pub fn from_float_frames(
        frames: &[Tensor<f32>],
        label: Label,
        template_id: u32,
        seed: u64,
    ) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::input("video needs >= 1 frame"))?;
        let (h, w) = (first.shape()[1], first.shape()[2]);
        let mut payload = Vec::with_capacity(frames.len() * h * w * 3);
        for f in frames {
            if f.shape() != [3, h, w] {
                return Err(Error::dim("inconsistent frame shapes in video"));
            }
            payload.extend_from_slice(&frame_to_rgb8(f));
        }
        Ok(VideoSample { frames_total: frames.len(), width: w, height: h, label, template_id, seed, payload })
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Interleaved RGB bytes of frame `t`.
    pub fn frame_rgb8(&self, t: usize) -> &[u8] {
        let stride = self.height * self.width * 3;
        &self.payload[t * stride..(t + 1) * stride]
    }

    /// Frame `t` as a float tensor `[3, h, w]` in [0, 1].
    pub fn frame_tensor(&self, t: usize) -> Tensor<f32> {
        rgb8_to_frame(self.frame_rgb8(t), self.width, self.height)
    }
}

/// FPV1 writer; the payload is stored verbatim.
pub fn write_fpv1(sample: &VideoSample, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(17 + sample.payload.len());
    buf.extend_from_slice(FPV1_MAGIC);
    buf.extend_from_slice(&(sample.frames_total as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.width as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.height as u32).to_le_bytes());
    buf.push(sample.label.as_u8());
    buf.extend_from_slice(&sample.payload);
    std::fs::write(path, buf)?;
    Ok(())
}

/// FPV1 reader. Template id and seed are manifest metadata, not part of the
/// file format; the loader fills them in when it has a manifest row.
pub fn read_fpv1(path: &Path) -> Result<VideoSample> {
    let buf = std::fs::read(path)?;
    if buf.len() < 17 {
        return Err(Error::format(format!("FPV1 file truncated at {} bytes", buf.len())));
    }
    if &buf[0..4] != FPV1_MAGIC {
        return Err(Error::format(format!("bad magic {:?}, expected FPV1", &buf[0..4])));
    }
    let t = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
    let w = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
    let h = u32::from_le_bytes([buf[12], buf[13], buf[14], buf[15]]) as usize;
    let label = Label::from_u8(buf[16])?;
    if t == 0 || w == 0 || h == 0 {
        return Err(Error::format(format!("bad FPV1 header: T={t} W={w} H={h}")));
    }
    let expected = t * w * h * 3;
    let payload = &buf[17..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "header implies {expected} payload bytes, file holds {}",
            payload.len()
        )));
    }
    Ok(VideoSample {
        frames_total: t,
        width: w,
        height: h,
        label,
        template_id: 0,
        seed: 0,
        payload: payload.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::format(format!("bad split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub label: Label,
    pub template_id: u32,
    pub seed: u64,
}

/// One line per sample: `relative-path,split,label,template-id,seed`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                e.path, e.split, e.label, e.template_id, e.seed
            ));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::format(format!(
                    "manifest line {}: expected 5 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            entries.push(ManifestEntry {
                path: fields[0].to_string(),
                split: fields[1].parse()?,
                label: fields[2].parse()?,
                template_id: fields[3]
                    .parse()
                    .map_err(|_| Error::format(format!("manifest line {}: bad template id", lineno + 1)))?,
                seed: fields[4]
                    .parse()
                    .map_err(|_| Error::format(format!("manifest line {}: bad seed", lineno + 1)))?,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.entries.iter().filter(|e| e.split == Split::Train).count();
        (train, self.entries.len() - train)
    }

    pub fn success_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.label.is_success()).count() as f64 / self.entries.len() as f64
    }
}

/// Generates `count` labeled videos under `out_dir`, cycling through the
/// templates, resampling candidates whose label would push the success
/// fraction outside [0.3, 0.7]. Every 20th sample lands in the eval split,
/// which yields the 95/5 partition.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    templates: &[TaskTemplate],
    count: usize,
    seed: u64,
    out_dir: &Path,
    width: usize,
    height: usize,
    contact_epsilon: f64,
) -> Result<Manifest> {
    if count < 20 {
        return Err(Error::input(format!("dataset needs count >= 20, got {count}")));
    }
    if templates.is_empty() {
        return Err(Error::input("no templates given"));
    }
    std::fs::create_dir_all(out_dir)?;

    // each label may fill at most count - ceil(0.3 * count) slots, which
    // pins the final success fraction inside [0.3, 0.7]
    let min_per_label = (3 * count + 9) / 10;
    let max_per_label = count - min_per_label;

    let mut label_counts = [0usize; 2];
    let mut attempt: u64 = 0;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let template = &templates[i % templates.len()];
        let budget_end = attempt + MAX_ATTEMPTS_PER_SAMPLE;
        let accepted = loop {
            if attempt >= budget_end {
                return Err(Error::Generation(format!(
                    "template {} could not produce a balancing label within {} attempts",
                    template.kind.name(),
                    MAX_ATTEMPTS_PER_SAMPLE
                )));
            }
            let sample_seed = derive_seed(seed, attempt);
            attempt += 1;
            let (traj, frames) = run_task(template, sample_seed, width, height)?;
            let label = label_task(&traj, contact_epsilon)?;
            if label_counts[label.as_u8() as usize] >= max_per_label {
                continue;
            }
            label_counts[label.as_u8() as usize] += 1;
            break VideoSample::from_float_frames(&frames, label, template.kind.id(), sample_seed)?;
        };
        let file_name = format!("sample_{i:05}.fpv1");
        write_fpv1(&accepted, &out_dir.join(&file_name))?;
        let split = if i % 20 == 19 { Split::Eval } else { Split::Train };
        entries.push(ManifestEntry {
            path: file_name,
            split,
            label: accepted.label,
            template_id: accepted.template_id,
            seed: accepted.seed,
        });
    }
    let manifest = Manifest { entries };
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Loads every sample referenced by a manifest, restoring template/seed
/// metadata from the manifest rows.
pub fn load_dataset(dir: &Path, manifest: &Manifest) -> Result<Vec<(VideoSample, Split)>> {
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let mut sample = read_fpv1(&dir.join(&e.path))?;
        if sample.label != e.label {
            return Err(Error::format(format!("label mismatch for {}", e.path)));
        }
        sample.template_id = e.template_id;
        sample.seed = e.seed;
        out.push((sample, e.split));
    }
    Ok(out)
}
