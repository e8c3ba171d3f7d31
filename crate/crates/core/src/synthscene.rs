//! Seeded synthetic multiparty scenes.
//!
//! A facilitator (person 0) stands at the center of a 1920×960 canvas with
//! participants to either side. One participant speaks at a time, rotating
//! round-robin. The facilitator's wrists orbit their rest positions with a
//! radius that tracks `amplitude × multiplier(speaker)`, elbows follow at
//! half the offset, and the head leans toward the speaker. The speaker's
//! own wrists orbit as well, so the current speaker is visible in every
//! frame, which makes the facilitator's next delta predictable from the
//! current image.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{DemoDataset, SessionMeta};
use crate::error::{Error, Result};
use crate::observation::{self, palette_color, ImageGrid, ObsMode, ObsSource};
use crate::pose::{FacilitatorTrace, KeypointFrame, Point2, Skeleton, BONES, NUM_JOINTS};
use crate::raster;

pub const CANVAS_WIDTH: usize = 1920;
pub const CANVAS_HEIGHT: usize = 960;

/// Joint offsets from the neck, in pixels.
pub const TEMPLATE_PX: [(f64, f64); NUM_JOINTS] = [
    (0.0, -40.0),
    (0.0, 0.0),
    (-35.0, 5.0),
    (-45.0, 55.0),
    (-30.0, 100.0),
    (35.0, 5.0),
    (45.0, 55.0),
    (30.0, 100.0),
    (-20.0, 120.0),
    (-25.0, 180.0),
    (-25.0, 240.0),
    (20.0, 120.0),
    (25.0, 180.0),
    (25.0, 240.0),
    (-10.0, -48.0),
    (10.0, -48.0),
    (-20.0, -44.0),
    (20.0, -44.0),
];

/// Horizontal neck positions (fractions of the width): facilitator first,
/// then participants alternating sides.
pub const ANCHOR_X: [f64; 6] = [0.5, 0.07, 0.67, 0.2, 0.8, 0.33];
pub const ANCHOR_Y: f64 = 0.42;

const HEAD_JOINTS: [usize; 5] = [0, 14, 15, 16, 17];
const R_ELBOW: usize = 3;
const R_WRIST: usize = 4;
const L_ELBOW: usize = 6;
const L_WRIST: usize = 7;
const NECK: usize = 1;

// Per-frame relaxation rates toward target radius and lean.
const RADIUS_RATE: f64 = 0.05;
const LEAN_RATE: f64 = 0.08;
// Maximum lean as a fraction of the wrist amplitude.
const LEAN_FRACTION: f64 = 0.4;
const SPEAKER_RADIUS_PX: f64 = 70.0;
const SPEAKER_FREQ_HZ: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleProfile {
    TeacherLike,
    MusicianLike,
    MusicTeacherLike,
}

impl RoleProfile {
    pub const ALL: [RoleProfile; 3] = [
        RoleProfile::TeacherLike,
        RoleProfile::MusicianLike,
        RoleProfile::MusicTeacherLike,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleProfile::TeacherLike => "teacher",
            RoleProfile::MusicianLike => "musician",
            RoleProfile::MusicTeacherLike => "music_teacher",
        }
    }

    /// Default gesture constants. Teacher-like bursts with one participant;
    /// music-teacher-like gestures widely and quickly throughout.
    pub fn gesture(self) -> GestureParams {
        match self {
            RoleProfile::TeacherLike => GestureParams {
                amplitude_px: 50.0,
                frequency_hz: 0.4,
                burst_multiplier: 5.0,
                rotation_period_frames: 150,
            },
            RoleProfile::MusicianLike => GestureParams {
                amplitude_px: 50.0,
                frequency_hz: 0.5,
                burst_multiplier: 1.0,
                rotation_period_frames: 150,
            },
            RoleProfile::MusicTeacherLike => GestureParams {
                amplitude_px: 90.0,
                frequency_hz: 0.6,
                burst_multiplier: 1.0,
                rotation_period_frames: 150,
            },
        }
    }
}

impl fmt::Display for RoleProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoleProfile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown profile `{s}` (teacher|musician|music_teacher)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GestureParams {
    pub amplitude_px: f64,
    pub frequency_hz: f64,
    /// Multiplier applied while participant 1 speaks.
    pub burst_multiplier: f64,
    pub rotation_period_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_participants: usize,
    pub duration_frames: usize,
    pub fps: f64,
    pub seed: u64,
    pub profile: RoleProfile,
    pub gesture: GestureParams,
    pub jitter_px: f64,
    pub clutter_level: f64,
}

impl SceneConfig {
    pub fn new(profile: RoleProfile, duration_frames: usize, seed: u64) -> Self {
        Self {
            num_participants: 6,
            duration_frames,
            fps: 30.0,
            seed,
            profile,
            gesture: profile.gesture(),
            jitter_px: 0.1,
            clutter_level: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=ANCHOR_X.len()).contains(&self.num_participants) {
            return bad(format!(
                "num_participants must be in [2, {}], got {}",
                ANCHOR_X.len(),
                self.num_participants
            ));
        }
        if self.duration_frames == 0 {
            return bad("duration_frames must be positive".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        let g = &self.gesture;
        if !(g.amplitude_px >= 0.0 && g.frequency_hz >= 0.0 && g.burst_multiplier >= 0.0) {
            return bad("gesture amplitude, frequency and burst must be non-negative".into());
        }
        if g.rotation_period_frames == 0 {
            return bad("rotation_period_frames must be positive".into());
        }
        if !(self.jitter_px >= 0.0) {
            return bad("jitter_px must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.clutter_level) {
            return bad(format!(
                "clutter_level must be in [0, 1], got {}",
                self.clutter_level
            ));
        }
        Ok(())
    }

    pub fn session_id(&self) -> String {
        format!("{}-s{}", self.profile, self.seed)
    }

    pub fn meta(&self, mode: ObsMode) -> SessionMeta {
        SessionMeta {
            session_id: self.session_id(),
            facilitator_index: 0,
            fps: self.fps,
            width: CANVAS_WIDTH,
            height: CANVAS_HEIGHT,
            seed: self.seed,
            clutter: self.clutter_level,
            profile: self.profile.as_str().to_string(),
            obs_mode: mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub config: SceneConfig,
    pub frames: Vec<KeypointFrame>,
    pub trace: FacilitatorTrace,
    /// Speaking participant per frame.
    pub speakers: Vec<usize>,
}

fn speaker_at(cfg: &SceneConfig, f: usize) -> usize {
    1 + (f / cfg.gesture.rotation_period_frames) % (cfg.num_participants - 1)
}

fn anchor(p: usize) -> (f64, f64) {
    (
        ANCHOR_X[p] * CANVAS_WIDTH as f64,
        ANCHOR_Y * CANVAS_HEIGHT as f64,
    )
}

/// Generates a session. Fails (rather than clamping) if any joint would
/// leave the canvas.
pub fn generate_session(cfg: &SceneConfig) -> Result<Session> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = cfg.gesture;
    let n = cfg.num_participants;

    // Per-speaker multipliers; participant 1 is the burst speaker.
    let mut multiplier: Vec<f64> = (0..n).map(|_| rng.gen_range(0.8..1.2)).collect();
    multiplier[0] = 0.0;
    if n > 1 {
        multiplier[1] = g.burst_multiplier;
    }
    let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let speaker_phase0: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let jitter = Normal::new(0.0, cfg.jitter_px).map_err(|e| Error::Config(e.to_string()))?;

    let max_dx = (1..n)
        .map(|p| (anchor(p).0 - anchor(0).0).abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let first = speaker_at(cfg, 0);
    let mut radius = g.amplitude_px * multiplier[first];
    let mut lean = lean_target(cfg, first, max_dx);
    let mut speaker_radius: Vec<f64> = (0..n)
        .map(|p| if p == first { SPEAKER_RADIUS_PX } else { 0.0 })
        .collect();

    let mut frames = Vec::with_capacity(cfg.duration_frames);
    let mut speakers = Vec::with_capacity(cfg.duration_frames);
    for f in 0..cfg.duration_frames {
        let t = f as f64 / cfg.fps;
        let speaker = speaker_at(cfg, f);
        radius += RADIUS_RATE * (g.amplitude_px * multiplier[speaker] - radius);
        lean += LEAN_RATE * (lean_target(cfg, speaker, max_dx) - lean);
        for (p, r) in speaker_radius.iter_mut().enumerate() {
            let target = if p == speaker { SPEAKER_RADIUS_PX } else { 0.0 };
            *r += RADIUS_RATE * (target - *r);
        }

        let mut persons = Vec::with_capacity(n);
        for p in 0..n {
            let (ax, ay) = anchor(p);
            let mut px: Vec<(f64, f64)> = TEMPLATE_PX
                .iter()
                .map(|&(dx, dy)| (ax + dx, ay + dy))
                .collect();
            let (r, phi) = if p == 0 {
                (radius, std::f64::consts::TAU * g.frequency_hz * t + phase0)
            } else {
                (
                    speaker_radius[p],
                    std::f64::consts::TAU * SPEAKER_FREQ_HZ * t + speaker_phase0[p],
                )
            };
            let (c, s) = (phi.cos(), phi.sin());
            px[R_WRIST].0 += r * c;
            px[R_WRIST].1 += r * s;
            px[R_ELBOW].0 += 0.5 * r * c;
            px[R_ELBOW].1 += 0.5 * r * s;
            px[L_WRIST].0 -= r * c;
            px[L_WRIST].1 += r * s;
            px[L_ELBOW].0 -= 0.5 * r * c;
            px[L_ELBOW].1 += 0.5 * r * s;
            if p == 0 {
                for &j in &HEAD_JOINTS {
                    px[j].0 += lean;
                }
                px[NECK].0 += 0.5 * lean;
            }
            let mut joints = [Point2 { x: 0.0, y: 0.0 }; NUM_JOINTS];
            for (j, &(x, y)) in px.iter().enumerate() {
                let (jx, jy) = if cfg.jitter_px > 0.0 {
                    (jitter.sample(&mut rng), jitter.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                let pt = Point2 {
                    x: (x + jx) / CANVAS_WIDTH as f64,
                    y: (y + jy) / CANVAS_HEIGHT as f64,
                };
                if !(0.0..=1.0).contains(&pt.x) || !(0.0..=1.0).contains(&pt.y) {
                    return Err(Error::Config(format!(
                        "frame {f}: person {p} joint {j} leaves the canvas at ({:.4}, {:.4})",
                        pt.x, pt.y
                    )));
                }
                joints[j] = pt;
            }
            persons.push(Skeleton(joints));
        }
        frames.push(KeypointFrame::new(persons, 0)?);
        speakers.push(speaker);
    }
    let trace = FacilitatorTrace::from_frames(&frames, cfg.fps)?;
    Ok(Session {
        config: cfg.clone(),
        frames,
        trace,
        speakers,
    })
}

fn lean_target(cfg: &SceneConfig, speaker: usize, max_dx: f64) -> f64 {
    let dx = anchor(speaker).0 - anchor(0).0;
    LEAN_FRACTION * cfg.gesture.amplitude_px * dx / max_dx
}

pub const BONE_HALF_WIDTH_PX: i64 = 7;
pub const RAW_JOINT_RADIUS_PX: i64 = 24;
const BACKGROUND_GRAY: f32 = 0.5;
const NOISE_CELL_PX: usize = 64;

/// Draws full-resolution scene frames over a cached cluttered background.
#[derive(Debug, Clone)]
pub struct RawRenderer {
    background: ImageGrid,
}

impl RawRenderer {
    /// Mid-gray canvas with seeded value noise and rectangles, both scaled
    /// by `clutter_level`.
    pub fn new(seed: u64, clutter_level: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&clutter_level) {
            return Err(Error::Config(format!(
                "clutter_level must be in [0, 1], got {clutter_level}"
            )));
        }
        let (w, h) = (CANVAS_WIDTH, CANVAS_HEIGHT);
        let mut bg = ImageGrid::filled(w, h, 3, BACKGROUND_GRAY);
        if clutter_level > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C1A7);
            let (gw, gh) = (w / NOISE_CELL_PX + 2, h / NOISE_CELL_PX + 2);
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let amp = 0.2 * clutter_level;
            let values = bg.values_mut();
            for y in 0..h {
                let fy = y as f64 / NOISE_CELL_PX as f64;
                let (y0, ty) = (fy.floor() as usize, fy.fract());
                for x in 0..w {
                    let fx = x as f64 / NOISE_CELL_PX as f64;
                    let (x0, tx) = (fx.floor() as usize, fx.fract());
                    let l = |i: usize, j: usize| lattice[j * gw + i];
                    let top = l(x0, y0) * (1.0 - tx) + l(x0 + 1, y0) * tx;
                    let bot = l(x0, y0 + 1) * (1.0 - tx) + l(x0 + 1, y0 + 1) * tx;
                    let v = (BACKGROUND_GRAY as f64 + amp * (top * (1.0 - ty) + bot * ty)) as f32;
                    let base = (y * w + x) * 3;
                    values[base..base + 3].fill(v);
                }
            }
            let rects = (24.0 * clutter_level).round() as usize;
            for _ in 0..rects {
                let rw = rng.gen_range(60..400);
                let rh = rng.gen_range(40..300);
                let x0 = rng.gen_range(0..w - rw);
                let y0 = rng.gen_range(0..h - rh);
                let color: [f32; 3] = [
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                ];
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        let base = (y * w + x) * 3;
                        values[base..base + 3].copy_from_slice(&color);
                    }
                }
            }
        }
        Ok(Self { background: bg })
    }

    pub fn background(&self) -> &ImageGrid {
        &self.background
    }

    /// Thick skeletons in palette colors over the background.
    pub fn render(&self, frame: &KeypointFrame) -> Result<ImageGrid> {
        frame.validate()?;
        let mut img = self.background.clone();
        for (p, skel) in frame.persons.iter().enumerate() {
            let color = palette_color(p);
            let px: Vec<(i64, i64)> = skel
                .0
                .iter()
                .map(|pt| {
                    (
                        observation::to_pixel(pt.x, CANVAS_WIDTH),
                        observation::to_pixel(pt.y, CANVAS_HEIGHT),
                    )
                })
                .collect();
            for &(a, b) in BONES.iter() {
                raster::draw_thick_line(&mut img, px[a], px[b], BONE_HALF_WIDTH_PX, &color);
            }
            for &(x, y) in &px {
                raster::fill_disc(&mut img, x, y, RAW_JOINT_RADIUS_PX, &color);
            }
        }
        Ok(img)
    }
}

pub fn render_raw(frame: &KeypointFrame, cfg: &SceneConfig) -> Result<ImageGrid> {
    RawRenderer::new(cfg.seed, cfg.clutter_level)?.render(frame)
}

/// Observation for one frame in the given mode.
pub fn frame_observation(
    mode: ObsMode,
    frame: &KeypointFrame,
    renderer: &RawRenderer,
) -> Result<ImageGrid> {
    match mode {
        ObsMode::Raw => {
            observation::make_observation(mode, ObsSource::Image(&renderer.render(frame)?))
        }
        ObsMode::Plotted => observation::make_observation(mode, ObsSource::Keypoints(frame)),
    }
}

/// The in-memory dataset of a session: every frame but the last paired
/// with its facilitator delta.
pub fn build_dataset(session: &Session, mode: ObsMode) -> Result<DemoDataset> {
    let renderer = match mode {
        ObsMode::Raw => RawRenderer::new(session.config.seed, session.config.clutter_level)?,
        ObsMode::Plotted => RawRenderer::new(session.config.seed, 0.0)?,
    };
    let n = session.frames.len();
    if n < 2 {
        return Err(Error::EmptyInput(
            "a session needs at least two frames".into(),
        ));
    }
    let observations = session.frames[..n - 1]
        .iter()
        .map(|f| frame_observation(mode, f, &renderer))
        .collect::<Result<Vec<_>>>()?;
    DemoDataset::new(
        session.config.meta(mode),
        0,
        session.frames.clone(),
        &observations,
    )
}

pub fn export_dataset(
    session: &Session,
    mode: ObsMode,
    out_dir: &std::path::Path,
) -> Result<DemoDataset> {
    let ds = build_dataset(session, mode)?;
    ds.export(out_dir)?;
    Ok(ds)
}
