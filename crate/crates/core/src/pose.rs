//! Pose data model: the 18-joint roster, keypoint frames, delta actions,
//! MPJPE and displacement statistics.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Index, IndexMut};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 18;
pub const ACTION_DIM: usize = 2 * NUM_JOINTS;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Nose",
    "Neck",
    "RShoulder",
    "RElbow",
    "RWrist",
    "LShoulder",
    "LElbow",
    "LWrist",
    "RHip",
    "RKnee",
    "RAnkle",
    "LHip",
    "LKnee",
    "LAnkle",
    "REye",
    "LEye",
    "REar",
    "LEar",
];

/// Skeleton edges over the roster, drawn as bones when rasterizing.
pub const BONES: [(usize, usize); 17] = [
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (1, 0),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

/// Index into the fixed joint roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointId(u8);

impl JointId {
    pub const NOSE: JointId = JointId(0);
    pub const NECK: JointId = JointId(1);
    pub const R_ELBOW: JointId = JointId(3);
    pub const R_WRIST: JointId = JointId(4);
    pub const L_ELBOW: JointId = JointId(6);
    pub const L_WRIST: JointId = JointId(7);

    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_JOINTS {
            return Err(Error::Index {
                index: index as i64,
                lo: 0,
                hi: NUM_JOINTS as i64 - 1,
            });
        }
        Ok(JointId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = JointId> {
        (0..NUM_JOINTS as u8).map(JointId)
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JOINT_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(s))
            .map(|i| JointId(i as u8))
            .ok_or_else(|| Error::Usage(format!("unknown joint `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One person's 18 joint positions in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Skeleton(pub [Point2; NUM_JOINTS]);

impl Skeleton {
    pub fn uniform(p: Point2) -> Self {
        Skeleton([p; NUM_JOINTS])
    }

    pub fn joints(&self) -> &[Point2; NUM_JOINTS] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|p| p.is_finite())
    }

    pub fn in_unit_square(&self) -> bool {
        self.0
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = *self;
        for p in out.0.iter_mut() {
            p.x += dx;
            p.y += dy;
        }
        out
    }
}

impl Index<JointId> for Skeleton {
    type Output = Point2;

    fn index(&self, j: JointId) -> &Point2 {
        &self.0[j.index()]
    }
}

impl IndexMut<JointId> for Skeleton {
    fn index_mut(&mut self, j: JointId) -> &mut Point2 {
        &mut self.0[j.index()]
    }
}

/// All persons in one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub persons: Vec<Skeleton>,
    pub facilitator_index: usize,
}

impl KeypointFrame {
    pub fn new(persons: Vec<Skeleton>, facilitator_index: usize) -> Result<Self> {
        let frame = Self {
            persons,
            facilitator_index,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// A frame with nobody in it.
    pub fn empty() -> Self {
        Self {
            persons: Vec::new(),
            facilitator_index: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.persons.is_empty() && self.facilitator_index >= self.persons.len() {
            return Err(Error::Index {
                index: self.facilitator_index as i64,
                lo: 0,
                hi: self.persons.len() as i64 - 1,
            });
        }
        for (i, s) in self.persons.iter().enumerate() {
            if !s.is_finite() || !s.in_unit_square() {
                return Err(Error::Domain(format!(
                    "person {i} has coordinates outside [0,1] or non-finite"
                )));
            }
        }
        Ok(())
    }

    pub fn facilitator(&self) -> Option<&Skeleton> {
        self.persons.get(self.facilitator_index)
    }
}

/// The facilitator's skeleton over time.
#[derive(Debug, Clone, PartialEq)]
pub struct FacilitatorTrace {
    pub frames: Vec<Skeleton>,
    pub frame_rate: f64,
}

impl FacilitatorTrace {
    pub fn new(frames: Vec<Skeleton>, frame_rate: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("facilitator trace has no frames".into()));
        }
        if frames.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain(
                "facilitator trace has non-finite coordinates".into(),
            ));
        }
        Ok(Self { frames, frame_rate })
    }

    /// Extracts the facilitator from a sequence of frames.
    pub fn from_frames(frames: &[KeypointFrame], frame_rate: f64) -> Result<Self> {
        let skeletons = frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.facilitator()
                    .copied()
                    .ok_or_else(|| Error::Dimension(format!("frame {i} has no facilitator")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(skeletons, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-joint (Δx, Δy) of the facilitator between consecutive frames,
/// laid out `(Δx_0, Δy_0, …, Δx_17, Δy_17)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVector(pub [f64; ACTION_DIM]);

impl Default for ActionVector {
    fn default() -> Self {
        ActionVector([0.0; ACTION_DIM])
    }
}

impl ActionVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; ACTION_DIM] = values.try_into().map_err(|_| {
            Error::Dimension(format!(
                "action needs {ACTION_DIM} values, got {}",
                values.len()
            ))
        })?;
        Ok(ActionVector(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn joint(&self, j: JointId) -> (f64, f64) {
        (self.0[2 * j.index()], self.0[2 * j.index() + 1])
    }

    pub fn max_abs_diff(&self, other: &ActionVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Differences between consecutive frames: `out[f] = frames[f+1] - frames[f]`.
pub fn compute_deltas(trace: &FacilitatorTrace) -> Result<Vec<ActionVector>> {
    if trace.frames.len() < 2 {
        return Err(Error::EmptyInput(
            "need at least 2 frames to difference".into(),
        ));
    }
    Ok(trace
        .frames
        .windows(2)
        .map(|w| {
            let mut a = ActionVector::zeros();
            for j in 0..NUM_JOINTS {
                a.0[2 * j] = w[1].0[j].x - w[0].0[j].x;
                a.0[2 * j + 1] = w[1].0[j].y - w[0].0[j].y;
            }
            a
        })
        .collect())
}

/// Inverse of [`compute_deltas`] for a single step.
pub fn apply_delta(frame: &Skeleton, action: &ActionVector) -> Result<Skeleton> {
    if !frame.is_finite() || !action.is_finite() {
        return Err(Error::Domain("apply_delta got non-finite input".into()));
    }
    let mut out = *frame;
    for (j, p) in out.0.iter_mut().enumerate() {
        p.x += action.0[2 * j];
        p.y += action.0[2 * j + 1];
    }
    Ok(out)
}

/// Mean over frames and joints of the Euclidean distance between
/// corresponding joints, in the same units as the inputs.
pub fn mpjpe(predicted: &[Skeleton], ground_truth: &[Skeleton]) -> Result<f64> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::Dimension(format!(
            "mpjpe: {} predicted frames vs {} ground-truth frames",
            predicted.len(),
            ground_truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("mpjpe over zero frames".into()));
    }
    let mut sum = 0.0;
    for (p, g) in predicted.iter().zip(ground_truth) {
        for (a, b) in p.0.iter().zip(g.0.iter()) {
            sum += a.distance(*b);
        }
    }
    Ok(sum / (predicted.len() * NUM_JOINTS) as f64)
}

/// Summary of one joint's per-frame displacement magnitudes, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementStats {
    pub mean: f64,
    /// Population standard deviation (divides by n).
    pub std: f64,
    /// max − min of the magnitude sequence.
    pub range: f64,
    pub samples: usize,
}

/// Magnitudes of one joint's frame-to-frame displacement after scaling
/// normalized coordinates to pixels.
pub fn displacement_magnitudes(
    trace: &FacilitatorTrace,
    joint: JointId,
    pixel_scale: (f64, f64),
) -> Result<Vec<f64>> {
    let (w, h) = pixel_scale;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::Domain(format!(
            "pixel scale must be positive, got {w}x{h}"
        )));
    }
    if trace.frames.len() < 2 {
        return Err(Error::EmptyInput(
            "need at least 2 frames for displacement".into(),
        ));
    }
    Ok(trace
        .frames
        .windows(2)
        .map(|pair| {
            let a = pair[0][joint];
            let b = pair[1][joint];
            ((b.x - a.x) * w).hypot((b.y - a.y) * h)
        })
        .collect())
}

pub fn displacement_stats(
    trace: &FacilitatorTrace,
    joint: JointId,
    pixel_scale: (f64, f64),
) -> Result<DisplacementStats> {
    let mags = displacement_magnitudes(trace, joint, pixel_scale)?;
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let var = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let (lo, hi) = mags
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            (lo.min(m), hi.max(m))
        });
    Ok(DisplacementStats {
        mean,
        std: var.sqrt(),
        range: hi - lo,
        samples: mags.len(),
    })
}

pub const KEYPOINT_HEADER: &str = "frame,person,joint,x,y";

/// Writes frames as `frame,person,joint,x,y` rows.
pub fn write_keypoints<W: Write>(out: W, frames: &[KeypointFrame]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(KEYPOINT_HEADER.split(','))?;
    for (f, frame) in frames.iter().enumerate() {
        for (p, skel) in frame.persons.iter().enumerate() {
            for (j, pt) in skel.0.iter().enumerate() {
                w.write_record([
                    f.to_string(),
                    p.to_string(),
                    j.to_string(),
                    pt.x.to_string(),
                    pt.y.to_string(),
                ])?;
            }
        }
    }
    w.flush()
}

/// Parses a keypoint file. Every frame must list the same persons, each
/// with all 18 joints, in ascending order.
pub fn read_keypoints<R: Read>(
    input: R,
    facilitator_index: usize,
    source: &Path,
) -> Result<Vec<KeypointFrame>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(source, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>().join(",") != KEYPOINT_HEADER {
        return Err(Error::format(
            source,
            format!("expected header `{KEYPOINT_HEADER}`"),
        ));
    }

    let mut frames: Vec<Vec<Skeleton>> = Vec::new();
    let mut next_joint = 0usize;
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(source, e.to_string()))?;
        let bad = |m: &str| Error::format(source, format!("row {}: {m}", row_no + 2));
        if rec.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let f: usize = rec[0].parse().map_err(|_| bad("bad frame index"))?;
        let p: usize = rec[1].parse().map_err(|_| bad("bad person index"))?;
        let j: usize = rec[2].parse().map_err(|_| bad("bad joint index"))?;
        let x: f64 = rec[3].parse().map_err(|_| bad("bad x"))?;
        let y: f64 = rec[4].parse().map_err(|_| bad("bad y"))?;
        if f == frames.len() {
            if next_joint != 0 {
                return Err(bad("previous person is missing joints"));
            }
            frames.push(Vec::new());
        } else if f + 1 != frames.len() {
            return Err(bad("frames out of order"));
        }
        let persons = frames.last_mut().expect("pushed above");
        if j != next_joint {
            return Err(bad("joints out of order"));
        }
        if j == 0 {
            if p != persons.len() {
                return Err(bad("persons out of order"));
            }
            persons.push(Skeleton::default());
        } else if p + 1 != persons.len() {
            return Err(bad("persons out of order"));
        }
        persons[p].0[j] = Point2::new(x, y);
        next_joint = (j + 1) % NUM_JOINTS;
    }
    if next_joint != 0 {
        return Err(Error::format(source, "last person is missing joints"));
    }

    let expected_persons = frames.first().map(|f| f.len()).unwrap_or(0);
    frames
        .into_iter()
        .enumerate()
        .map(|(i, persons)| {
            if persons.len() != expected_persons {
                return Err(Error::format(
                    source,
                    format!("frame {i}: person count changed"),
                ));
            }
            KeypointFrame::new(persons, facilitator_index)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_skeleton(rng: &mut ChaCha8Rng) -> Skeleton {
        let mut s = Skeleton::default();
        for p in s.0.iter_mut() {
            *p = Point2::new(rng.gen(), rng.gen());
        }
        s
    }

    #[test]
    fn roster_constants() {
        assert_eq!(JointId::R_WRIST.index(), 4);
        assert_eq!(JointId::L_WRIST.index(), 7);
        assert_eq!(JointId::R_WRIST.name(), "RWrist");
        assert_eq!("lwrist".parse::<JointId>().unwrap(), JointId::L_WRIST);
        assert!("Tail".parse::<JointId>().is_err());
        assert!(JointId::new(18).is_err());
        assert_eq!(BONES.len(), 17);
    }

    #[test]
    fn deltas_of_uniform_shift() {
        let trace = FacilitatorTrace::new(
            vec![
                Skeleton::uniform(Point2::new(0.5, 0.5)),
                Skeleton::uniform(Point2::new(0.6, 0.4)),
            ],
            30.0,
        )
        .unwrap();
        let d = compute_deltas(&trace).unwrap();
        assert_eq!(d.len(), 1);
        for j in JointId::all() {
            let (dx, dy) = d[0].joint(j);
            assert!((dx - 0.1).abs() < 1e-12 && (dy + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn deltas_of_identical_frames_are_zero() {
        let s = Skeleton::uniform(Point2::new(0.3, 0.7));
        let trace = FacilitatorTrace::new(vec![s, s], 30.0).unwrap();
        assert_eq!(compute_deltas(&trace).unwrap()[0], ActionVector::zeros());
    }

    #[test]
    fn deltas_need_two_frames() {
        let trace = FacilitatorTrace::new(vec![Skeleton::default()], 30.0).unwrap();
        assert!(matches!(compute_deltas(&trace), Err(Error::EmptyInput(_))));
        assert!(FacilitatorTrace::new(vec![], 30.0).is_err());
    }

    #[test]
    fn deltas_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<Skeleton> = (0..3).map(|_| random_skeleton(&mut rng)).collect();
        let trace = FacilitatorTrace::new(frames.clone(), 30.0).unwrap();
        let deltas = compute_deltas(&trace).unwrap();
        assert_eq!(deltas.len(), 2);
        for f in 0..2 {
            for j in 0..NUM_JOINTS {
                assert_eq!(deltas[f].0[2 * j], frames[f + 1].0[j].x - frames[f].0[j].x);
                assert_eq!(
                    deltas[f].0[2 * j + 1],
                    frames[f + 1].0[j].y - frames[f].0[j].y
                );
            }
        }
    }

    #[test]
    fn apply_delta_cases() {
        let s = Skeleton::uniform(Point2::new(0.5, 0.5));
        assert_eq!(apply_delta(&s, &ActionVector::zeros()).unwrap(), s);
        let mut a = ActionVector::zeros();
        for j in 0..NUM_JOINTS {
            a.0[2 * j] = 0.1;
            a.0[2 * j + 1] = -0.1;
        }
        let moved = apply_delta(&s, &a).unwrap();
        assert!(moved
            .0
            .iter()
            .all(|p| (p.x - 0.6).abs() < 1e-12 && (p.y - 0.4).abs() < 1e-12));

        let mut nan = ActionVector::zeros();
        nan.0[3] = f64::NAN;
        assert!(apply_delta(&s, &nan).is_err());
    }

    #[test]
    fn round_trip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_skeleton(&mut rng);
            let b = random_skeleton(&mut rng);
            let trace = FacilitatorTrace::new(vec![a, b], 30.0).unwrap();
            let d = compute_deltas(&trace).unwrap();
            let back = apply_delta(&a, &d[0]).unwrap();
            for j in 0..NUM_JOINTS {
                assert!((back.0[j].x - b.0[j].x).abs() <= 1e-12);
                assert!((back.0[j].y - b.0[j].y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mpjpe_cases() {
        let s = Skeleton::uniform(Point2::new(0.2, 0.2));
        assert_eq!(mpjpe(&[s], &[s]).unwrap(), 0.0);
        let mut moved = s;
        moved.0[4].x += 0.3;
        moved.0[4].y += 0.4;
        let e = mpjpe(&[moved], &[s]).unwrap();
        assert!((e - 0.5 / 18.0).abs() < 1e-12);
        assert!(matches!(mpjpe(&[s, s], &[s]), Err(Error::Dimension(_))));
    }

    #[test]
    fn stats_cases() {
        let still = FacilitatorTrace::new(vec![Skeleton::default(); 5], 30.0).unwrap();
        let st = displacement_stats(&still, JointId::R_WRIST, (1920.0, 960.0)).unwrap();
        assert_eq!((st.mean, st.std, st.range), (0.0, 0.0, 0.0));

        // Pixel displacements (3, 0) then (0, 4) on a 100x100 canvas.
        let mut frames = vec![Skeleton::default(); 3];
        frames[1].0[4] = Point2::new(0.03, 0.0);
        frames[2].0[4] = Point2::new(0.03, 0.04);
        let trace = FacilitatorTrace::new(frames, 30.0).unwrap();
        let st = displacement_stats(&trace, JointId::R_WRIST, (100.0, 100.0)).unwrap();
        assert!((st.mean - 3.5).abs() < 1e-9);
        assert!((st.std - 0.5).abs() < 1e-9);
        assert!((st.range - 1.0).abs() < 1e-9);

        let short = FacilitatorTrace::new(vec![Skeleton::default()], 30.0).unwrap();
        assert!(matches!(
            displacement_stats(&short, JointId::R_WRIST, (1.0, 1.0)),
            Err(Error::EmptyInput(_))
        ));
        assert!(displacement_stats(&trace, JointId::R_WRIST, (0.0, 1.0)).is_err());
    }

    #[test]
    fn keypoint_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<KeypointFrame> = (0..4)
            .map(|_| {
                KeypointFrame::new((0..3).map(|_| random_skeleton(&mut rng)).collect(), 1).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_keypoints(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frame,person,joint,x,y\n"));
        let back = read_keypoints(buf.as_slice(), 1, Path::new("mem")).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn keypoint_file_rejects_bad_header() {
        let err = read_keypoints("f,p,j,x,y\n".as_bytes(), 0, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
