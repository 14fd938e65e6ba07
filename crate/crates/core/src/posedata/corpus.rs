//! Corpus layout: per-item pose JSONL and frame binaries plus a manifest
//! JSON, and the loaded in-memory form the pipeline consumes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::action_unit::{compose_action_unit, descriptor, GrayImage, DESCRIPTOR_DIM};
use super::pose::{load_pose_sequence, pose_vector, write_pose_jsonl, PoseSequence};
use super::DataError;
use crate::{Real, Tensor};

pub const FRAMES_MAGIC: &[u8; 4] = b"AUF1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VideoItem {
    pub id: String,
    pub difficulty: Real,
    pub score: Real,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_keyframes: Option<Vec<usize>>,
    pub pose_path: String,
    pub frames_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub score_max: Real,
    pub c_angle: Real,
    pub c_splash: Real,
    pub items: Vec<VideoItem>,
}

impl Manifest {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.items.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        if !(self.score_max > 0.0) {
            return Err(DataError::Manifest(format!(
                "score_max = {}",
                self.score_max
            )));
        }
        for item in &self.items {
            if !(0.0..=self.score_max).contains(&item.score) {
                return Err(DataError::Manifest(format!(
                    "item `{}` score {} outside [0, {}]",
                    item.id, item.score, self.score_max
                )));
            }
            if !(item.difficulty > 0.0) {
                return Err(DataError::Manifest(format!(
                    "item `{}` difficulty {}",
                    item.id, item.difficulty
                )));
            }
        }
        Ok(())
    }
}

/// Frame file: magic `AUF1`, u32 LE T/H/W, then f32 LE pixels, row-major,
/// frame-major.
pub fn write_frames(frames: &[GrayImage], path: &Path) -> Result<(), DataError> {
    if frames.is_empty() {
        return Err(DataError::BadParams("no frames to write".into()));
    }
    let (h, w) = (frames[0].h, frames[0].w);
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |buf: &[u8]| out.write_all(buf).map_err(|e| DataError::io(path, e));
    write(FRAMES_MAGIC)?;
    write(&(frames.len() as u32).to_le_bytes())?;
    write(&(h as u32).to_le_bytes())?;
    write(&(w as u32).to_le_bytes())?;
    for f in frames {
        if f.h != h || f.w != w {
            return Err(DataError::Invariant {
                field: "frames".into(),
                msg: format!("frame size {}x{} differs from {}x{}", f.h, f.w, h, w),
            });
        }
        for &v in &f.data {
            write(&v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<GrayImage>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| DataError::io(path, e))?;
    if &magic != FRAMES_MAGIC {
        return Err(DataError::Manifest(format!(
            "{}: bad frame-file magic {magic:?}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32, DataError> {
        r.read_exact(&mut u32buf).map_err(|e| DataError::io(path, e))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let t = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let mut frames = Vec::with_capacity(t);
    let mut fbuf = vec![0u8; h * w * 4];
    for _ in 0..t {
        r.read_exact(&mut fbuf).map_err(|e| DataError::io(path, e))?;
        let data = fbuf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        frames.push(GrayImage { h, w, data });
    }
    Ok(frames)
}

/// An item ready to be written out.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub difficulty: Real,
    pub score: Real,
    pub gt_keyframes: Vec<usize>,
    pub pose: PoseSequence,
    pub frames: Vec<GrayImage>,
}

/// Writes pose JSONL and frame binaries for every entry plus
/// `manifest.json`; returns the manifest.
pub fn write_corpus(
    entries: &[CorpusEntry],
    dir: &Path,
    score_max: Real,
    c_angle: Real,
    c_splash: Real,
) -> Result<Manifest, DataError> {
    if entries.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut items = Vec::with_capacity(entries.len());
    for e in entries {
        let pose_path = format!("{}.pose.jsonl", e.id);
        let frames_path = format!("{}.frames.bin", e.id);
        write_pose_jsonl(&e.pose, &dir.join(&pose_path))?;
        write_frames(&e.frames, &dir.join(&frames_path))?;
        items.push(VideoItem {
            id: e.id.clone(),
            difficulty: e.difficulty,
            score: e.score,
            gt_keyframes: Some(e.gt_keyframes.clone()),
            pose_path,
            frames_path,
        });
    }
    let manifest = Manifest {
        score_max,
        c_angle,
        c_splash,
        items,
    };
    manifest.validate()?;
    let path = dir.join("manifest.json");
    let file = File::create(&path).map_err(|e| DataError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &manifest)
        .map_err(|e| DataError::Manifest(e.to_string()))?;
    w.flush().map_err(|e| DataError::io(&path, e))?;
    Ok(manifest)
}

/// A corpus on disk: the manifest plus its directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

pub fn load_corpus(manifest_path: &Path) -> Result<Corpus, DataError> {
    let file = File::open(manifest_path).map_err(|e| DataError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| DataError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    manifest.validate()?;
    let dir = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    Ok(Corpus { manifest, dir })
}

/// An item loaded and preprocessed for the models: per-frame pose vectors
/// and pooled action-unit descriptors.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub item: VideoItem,
    pub pose: PoseSequence,
    /// `T x (2J + U + 1)`
    pub pose_vectors: Tensor,
    /// `T x 64`
    pub descriptors: Tensor,
}

impl LoadedItem {
    pub fn len(&self) -> usize {
        self.pose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pose.is_empty()
    }
}

/// Loads one item and composes its action-unit descriptors.
pub fn load_item(
    corpus: &Corpus,
    item: &VideoItem,
    joint_count: usize,
    angle_count: usize,
    roi_joints: &[usize],
    patch_resolution: usize,
    crop_frac: Real,
) -> Result<LoadedItem, DataError> {
    let pose_load = load_pose_sequence(&corpus.dir.join(&item.pose_path), joint_count, angle_count)?;
    let pose = pose_load.sequence;
    let frames = read_frames(&corpus.dir.join(&item.frames_path))?;
    if frames.len() != pose.len() {
        return Err(DataError::Invariant {
            field: "frames".into(),
            msg: format!(
                "item `{}`: {} frames vs {} pose frames",
                item.id,
                frames.len(),
                pose.len()
            ),
        });
    }
    let t = pose.len();
    let pv_dim = 2 * pose.joint_count() + pose.angle_count() + 1;
    let mut pose_data = Vec::with_capacity(t * pv_dim);
    let mut desc_data = Vec::with_capacity(t * DESCRIPTOR_DIM);
    for (frame, img) in pose.frames().iter().zip(&frames) {
        pose_data.extend(pose_vector(frame));
        let au = compose_action_unit(img, frame, roi_joints, patch_resolution, crop_frac)?;
        desc_data.extend(descriptor(&au));
    }
    Ok(LoadedItem {
        item: item.clone(),
        pose,
        pose_vectors: Tensor::matrix(t, pv_dim, pose_data),
        descriptors: Tensor::matrix(t, DESCRIPTOR_DIM, desc_data),
    })
}
