//! Demonstration datasets: `(observation, action)` pairs with the keypoint
//! frames they came from, plus their on-disk layout.
//!
//! Pair `i` couples the observation of frame `i` with the facilitator delta
//! from frame `i` to `i + 1`, so a dataset of `n` pairs carries `n + 1`
//! keypoint frames.
//!
//! Directory layout:
//!
//! ```text
//! session.meta     key=value metadata
//! keypoints.csv    frame,person,joint,x,y
//! actions.csv      frame,j0_dx,j0_dy,...,j17_dy
//! obs/NNNNNN.ppm   one 128x128 P6 observation per pair
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::netpbm;
use crate::observation::{ImageGrid, ObsMode, OBS_CHANNELS, OBS_SIZE};
use crate::pose::{
    self, ActionVector, FacilitatorTrace, KeypointFrame, Skeleton, ACTION_DIM, NUM_JOINTS,
};

const OBS_LEN: usize = OBS_SIZE * OBS_SIZE * OBS_CHANNELS;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub session_id: String,
    pub facilitator_index: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub clutter: f64,
    pub profile: String,
    pub obs_mode: ObsMode,
}

impl SessionMeta {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("session_id", &self.session_id);
        doc.set("facilitator_index", self.facilitator_index);
        doc.set("fps", self.fps);
        doc.set("width", self.width);
        doc.set("height", self.height);
        doc.set("seed", self.seed);
        doc.set("clutter", self.clutter);
        doc.set("profile", &self.profile);
        doc.set("obs_mode", self.obs_mode);
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> std::result::Result<Self, String> {
        Ok(Self {
            session_id: doc.require("session_id")?.to_string(),
            facilitator_index: doc.parse_value("facilitator_index")?,
            fps: doc.parse_value("fps")?,
            width: doc.parse_value("width")?,
            height: doc.parse_value("height")?,
            seed: doc.parse_value("seed")?,
            clutter: doc.parse_value("clutter")?,
            profile: doc.require("profile")?.to_string(),
            obs_mode: doc
                .require("obs_mode")?
                .parse()
                .map_err(|e: Error| e.to_string())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    meta: SessionMeta,
    first_frame: usize,
    frames: Vec<KeypointFrame>,
    // Quantized 8-bit observations; exactly what the image files hold.
    observations: Vec<Vec<u8>>,
    actions: Vec<ActionVector>,
}

impl DemoDataset {
    /// Builds a dataset whose actions are the facilitator deltas of `frames`.
    /// Observations are quantized to 8 bits.
    pub fn new(
        meta: SessionMeta,
        first_frame: usize,
        frames: Vec<KeypointFrame>,
        observations: &[ImageGrid],
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::EmptyInput(
                "a dataset needs at least two frames".into(),
            ));
        }
        if observations.len() + 1 != frames.len() {
            return Err(Error::Dimension(format!(
                "{} frames need {} observations, got {}",
                frames.len(),
                frames.len() - 1,
                observations.len()
            )));
        }
        let trace = FacilitatorTrace::from_frames(&frames, meta.fps)?;
        let actions = pose::compute_deltas(&trace)?;
        let observations = observations
            .iter()
            .map(quantize_obs)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            meta,
            first_frame,
            frames,
            observations,
            actions,
        })
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    /// Session frame index of pair 0.
    pub fn first_frame(&self) -> usize {
        self.first_frame
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// The `len() + 1` keypoint frames.
    pub fn frames(&self) -> &[KeypointFrame] {
        &self.frames
    }

    pub fn actions(&self) -> &[ActionVector] {
        &self.actions
    }

    pub fn action(&self, i: usize) -> &ActionVector {
        &self.actions[i]
    }

    pub fn observation(&self, i: usize) -> ImageGrid {
        let values = self.observations[i]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        ImageGrid::new(OBS_SIZE, OBS_SIZE, OBS_CHANNELS, values).expect("validated on construction")
    }

    pub fn observations(&self) -> Vec<ImageGrid> {
        (0..self.len()).map(|i| self.observation(i)).collect()
    }

    /// Facilitator skeletons, `len() + 1` of them.
    pub fn positions(&self) -> Vec<Skeleton> {
        self.frames
            .iter()
            .map(|f| *f.facilitator().expect("validated on construction"))
            .collect()
    }

    pub fn trace(&self) -> FacilitatorTrace {
        FacilitatorTrace::new(self.positions(), self.meta.fps).expect("validated on construction")
    }

    /// Pairs `start..end` as a dataset of their own.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Index {
                index: end as i64,
                lo: start as i64 + 1,
                hi: self.len() as i64,
            });
        }
        Ok(Self {
            meta: self.meta.clone(),
            first_frame: self.first_frame + start,
            frames: self.frames[start..=end].to_vec(),
            observations: self.observations[start..end].to_vec(),
            actions: self.actions[start..end].to_vec(),
        })
    }

    pub fn export(&self, dir: &Path) -> Result<()> {
        let obs_dir = dir.join("obs");
        std::fs::create_dir_all(&obs_dir).map_err(|e| Error::io(&obs_dir, e))?;

        let mut meta = self.meta.to_kv();
        meta.set("first_frame", self.first_frame);
        meta.set("pairs", self.len());
        let meta_path = dir.join("session.meta");
        std::fs::write(&meta_path, meta.to_text()).map_err(|e| Error::io(&meta_path, e))?;

        let kp_path = dir.join("keypoints.csv");
        let file = File::create(&kp_path).map_err(|e| Error::io(&kp_path, e))?;
        pose::write_keypoints(BufWriter::new(file), &self.frames)
            .map_err(|e| Error::io(&kp_path, e))?;

        let act_path = dir.join("actions.csv");
        write_actions(&act_path, &self.actions)?;

        for i in 0..self.len() {
            let path = obs_dir.join(obs_file_name(i));
            netpbm::write(&path, &self.observation(i))?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`DemoDataset::export`], checking that the
    /// actions file agrees with the keypoint deltas.
    pub fn import(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("session.meta");
        let doc = KvDoc::read(&meta_path)?;
        let meta = SessionMeta::from_kv(&doc).map_err(|m| Error::format(&meta_path, m))?;
        let first_frame: usize = doc
            .parse_value("first_frame")
            .map_err(|m| Error::format(&meta_path, m))?;
        let pairs: usize = doc
            .parse_value("pairs")
            .map_err(|m| Error::format(&meta_path, m))?;

        let kp_path = dir.join("keypoints.csv");
        let file = File::open(&kp_path).map_err(|e| Error::io(&kp_path, e))?;
        let frames = pose::read_keypoints(BufReader::new(file), meta.facilitator_index, &kp_path)?;
        if frames.len() != pairs + 1 {
            return Err(Error::format(
                &kp_path,
                format!("expected {} frames, found {}", pairs + 1, frames.len()),
            ));
        }

        let obs_dir = dir.join("obs");
        let mut observations = Vec::with_capacity(pairs);
        for i in 0..pairs {
            let path = obs_dir.join(obs_file_name(i));
            let img = netpbm::read(&path)?;
            if img.width() != OBS_SIZE || img.height() != OBS_SIZE || img.channels() != OBS_CHANNELS
            {
                return Err(Error::format(
                    &path,
                    "observation must be a 128x128 RGB image",
                ));
            }
            observations.push(img);
        }

        let ds = DemoDataset::new(meta, first_frame, frames, &observations)?;
        let act_path = dir.join("actions.csv");
        let actions = read_actions(&act_path)?;
        if actions != ds.actions {
            return Err(Error::format(
                &act_path,
                "actions disagree with keypoint deltas",
            ));
        }
        Ok(ds)
    }
}

fn quantize_obs(img: &ImageGrid) -> Result<Vec<u8>> {
    if img.width() != OBS_SIZE || img.height() != OBS_SIZE || img.channels() != OBS_CHANNELS {
        return Err(Error::Dimension(format!(
            "observations must be {OBS_SIZE}x{OBS_SIZE}x{OBS_CHANNELS}, got {}x{}x{}",
            img.width(),
            img.height(),
            img.channels()
        )));
    }
    let bytes: Vec<u8> = img.values().iter().map(|&v| netpbm::quantize(v)).collect();
    debug_assert_eq!(bytes.len(), OBS_LEN);
    Ok(bytes)
}

pub fn obs_file_name(i: usize) -> String {
    format!("{i:06}.ppm")
}

pub fn actions_header() -> Vec<String> {
    let mut h = vec!["frame".to_string()];
    for j in 0..NUM_JOINTS {
        h.push(format!("j{j}_dx"));
        h.push(format!("j{j}_dy"));
    }
    h
}

pub fn write_actions(path: &Path, actions: &[ActionVector]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(actions_header()).map_err(wrap)?;
    for (f, a) in actions.iter().enumerate() {
        let mut row = vec![f.to_string()];
        row.extend(a.0.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_actions(path: &Path) -> Result<Vec<ActionVector>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if headers
        .iter()
        .ne(actions_header().iter().map(String::as_str))
    {
        return Err(Error::format(path, "unexpected actions header"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |m: &str| Error::format(path, format!("row {}: {m}", i + 2));
        if rec.len() != ACTION_DIM + 1 {
            return Err(bad("wrong field count"));
        }
        if rec[0].parse::<usize>().ok() != Some(i) {
            return Err(bad("frame index out of sequence"));
        }
        let mut a = [0.0; ACTION_DIM];
        for (k, slot) in a.iter_mut().enumerate() {
            *slot = rec[k + 1].parse().map_err(|_| bad("bad number"))?;
        }
        out.push(ActionVector(a));
    }
    Ok(out)
}
