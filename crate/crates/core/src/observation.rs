//! Observation images: resized raw scenes and keypoints plotted on white.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pose::{KeypointFrame, BONES};
use crate::raster;

/// Side length of the square observation fed to the denoiser.
pub const OBS_SIZE: usize = 128;
pub const OBS_CHANNELS: usize = 3;

pub const JOINT_RADIUS_PX: i64 = 2;

/// Per-person colors (8-bit sRGB), cycled by person index.
pub const PALETTE: [[u8; 3]; 8] = [
    [220, 20, 60],
    [30, 144, 255],
    [34, 139, 34],
    [255, 140, 0],
    [148, 0, 211],
    [0, 139, 139],
    [139, 69, 19],
    [105, 105, 105],
];

pub fn palette_color(person: usize) -> [f32; 3] {
    let [r, g, b] = PALETTE[person % PALETTE.len()];
    [r as f32 / 255.0, g as f32 / 255.0, b as f32 / 255.0]
}

/// Row-major `height × width × channels` pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f32>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if values.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    /// # Panics
    /// If a dimension is zero or `value` is outside `[0, 1]`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0 && (channels == 1 || channels == 3));
        assert!((0.0..=1.0).contains(&value));
        Self {
            width,
            height,
            channels,
            values: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.values[base..base + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Grayscale images are replicated into three channels.
    pub fn to_rgb(&self) -> ImageGrid {
        if self.channels == 3 {
            return self.clone();
        }
        let values = self.values.iter().flat_map(|&v| [v, v, v]).collect();
        ImageGrid {
            width: self.width,
            height: self.height,
            channels: 3,
            values,
        }
    }

    /// Snaps every value to the nearest 8-bit level, as a NetPBM round trip would.
    pub fn quantized(&self) -> ImageGrid {
        let values = self
            .values
            .iter()
            .map(|&v| crate::netpbm::quantize(v) as f32 / 255.0)
            .collect();
        ImageGrid {
            values,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObsMode {
    Raw,
    Plotted,
}

impl ObsMode {
    pub const ALL: [ObsMode; 2] = [ObsMode::Raw, ObsMode::Plotted];

    pub fn as_str(self) -> &'static str {
        match self {
            ObsMode::Raw => "raw",
            ObsMode::Plotted => "plotted",
        }
    }
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ObsMode::Raw),
            "plotted" => Ok(ObsMode::Plotted),
            other => Err(Error::Usage(format!(
                "unknown obs mode `{other}` (raw|plotted)"
            ))),
        }
    }
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
///
/// Output pixel `i` samples the source at `(i + 0.5) * in / out - 0.5`.
pub fn resize_bilinear(img: &ImageGrid, out_w: usize, out_h: usize) -> Result<ImageGrid> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Config(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    let (in_w, in_h, c) = (img.width, img.height, img.channels);
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (s - lo as f64) as f32)
            })
            .collect()
    };
    let xs = taps(out_w, in_w);
    let ys = taps(out_h, in_h);

    let mut values = vec![0.0f32; out_w * out_h * c];
    let src = &img.values;
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        let row0 = y0 * in_w * c;
        let row1 = y1 * in_w * c;
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let dst = (oy * out_w + ox) * c;
            for k in 0..c {
                let a = src[row0 + x0 * c + k];
                let b = src[row0 + x1 * c + k];
                let p = src[row1 + x0 * c + k];
                let q = src[row1 + x1 * c + k];
                let top = a + (b - a) * fx;
                let bot = p + (q - p) * fx;
                values[dst + k] = (top + (bot - top) * fy).clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageGrid {
        width: out_w,
        height: out_h,
        channels: c,
        values,
    })
}

/// Pixel holding a normalized coordinate: `floor(v * size)`, clamped to the canvas.
pub fn to_pixel(v: f64, size: usize) -> i64 {
    ((v * size as f64).floor() as i64).clamp(0, size as i64 - 1)
}

/// Plots every person's skeleton on a white RGB canvas: 1-pixel bones,
/// then joint discs of radius [`JOINT_RADIUS_PX`], in the person's palette color.
pub fn rasterize_keypoints(frame: &KeypointFrame, out_w: usize, out_h: usize) -> Result<ImageGrid> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Config(format!(
            "canvas must be positive, got {out_w}x{out_h}"
        )));
    }
    frame.validate()?;
    let mut img = ImageGrid::filled(out_w, out_h, 3, 1.0);
    for (p, skel) in frame.persons.iter().enumerate() {
        let color = palette_color(p);
        let px: Vec<(i64, i64)> = skel
            .0
            .iter()
            .map(|pt| (to_pixel(pt.x, out_w), to_pixel(pt.y, out_h)))
            .collect();
        for &(a, b) in BONES.iter() {
            raster::draw_line(&mut img, px[a].0, px[a].1, px[b].0, px[b].1, &color);
        }
        for &(x, y) in &px {
            raster::fill_disc(&mut img, x, y, JOINT_RADIUS_PX, &color);
        }
    }
    Ok(img)
}

/// What an observation is built from.
#[derive(Debug, Clone, Copy)]
pub enum ObsSource<'a> {
    Image(&'a ImageGrid),
    Keypoints(&'a KeypointFrame),
}

/// Builds the 128×128 RGB conditioning image for either mode.
pub fn make_observation(mode: ObsMode, source: ObsSource<'_>) -> Result<ImageGrid> {
    match (mode, source) {
        (ObsMode::Raw, ObsSource::Image(img)) => resize_bilinear(&img.to_rgb(), OBS_SIZE, OBS_SIZE),
        (ObsMode::Plotted, ObsSource::Keypoints(frame)) => {
            rasterize_keypoints(frame, OBS_SIZE, OBS_SIZE)
        }
        (ObsMode::Raw, ObsSource::Keypoints(_)) => Err(Error::Usage(
            "raw observations are built from an image, got keypoints".into(),
        )),
        (ObsMode::Plotted, ObsSource::Image(_)) => Err(Error::Usage(
            "plotted observations are built from keypoints, got an image".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Point2, Skeleton};

    #[test]
    fn grid_validation() {
        assert!(matches!(
            ImageGrid::new(0, 2, 1, vec![]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ImageGrid::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            ImageGrid::new(1, 1, 1, vec![1.5]),
            Err(Error::Domain(_))
        ));
        assert!(ImageGrid::new(1, 1, 2, vec![0.0; 2]).is_err());
    }

    #[test]
    fn resize_constant() {
        let img = ImageGrid::filled(37, 11, 3, 0.3);
        let out = resize_bilinear(&img, 128, 128).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn resize_two_to_one_samples_midpoint() {
        let img = ImageGrid::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 1, 1).unwrap();
        assert_eq!(out.values(), &[0.5]);
    }

    #[test]
    fn resize_identity() {
        let values: Vec<f32> = (0..5 * 4 * 3).map(|i| (i % 17) as f32 / 16.0).collect();
        let img = ImageGrid::new(5, 4, 3, values).unwrap();
        let out = resize_bilinear(&img, 5, 4).unwrap();
        for (a, b) in out.values().iter().zip(img.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = ImageGrid::filled(4, 4, 1, 0.0);
        assert!(matches!(resize_bilinear(&img, 0, 3), Err(Error::Config(_))));
    }

    #[test]
    fn empty_frame_is_white() {
        let img = rasterize_keypoints(&KeypointFrame::empty(), 128, 128).unwrap();
        assert!(img.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_point_disc_matches_distance_test() {
        let frame = KeypointFrame::new(vec![Skeleton::uniform(Point2::new(0.5, 0.5))], 0).unwrap();
        let img = rasterize_keypoints(&frame, 128, 128).unwrap();
        let color = palette_color(0);
        for y in 0..128i64 {
            for x in 0..128i64 {
                let inside = (x - 64).pow(2) + (y - 64).pow(2) <= 4;
                let px = img.pixel(x as usize, y as usize);
                if inside {
                    assert_eq!(px, &color[..], "pixel ({x},{y})");
                } else {
                    assert_eq!(px, &[1.0, 1.0, 1.0][..], "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn make_observation_modes() {
        let gray = ImageGrid::filled(1920, 960, 3, 0.3);
        let raw = make_observation(ObsMode::Raw, ObsSource::Image(&gray)).unwrap();
        assert_eq!((raw.width(), raw.height(), raw.channels()), (128, 128, 3));
        assert!(raw.values().iter().all(|&v| (v - 0.3).abs() < 1e-6));

        let empty = KeypointFrame::empty();
        let plotted = make_observation(ObsMode::Plotted, ObsSource::Keypoints(&empty)).unwrap();
        assert!(plotted.values().iter().all(|&v| v == 1.0));

        assert!(matches!(
            make_observation(ObsMode::Raw, ObsSource::Keypoints(&empty)),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            make_observation(ObsMode::Plotted, ObsSource::Image(&gray)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn gray_input_becomes_rgb() {
        let gray = ImageGrid::filled(64, 32, 1, 0.25);
        let raw = make_observation(ObsMode::Raw, ObsSource::Image(&gray)).unwrap();
        assert_eq!(raw.channels(), 3);
    }

    #[test]
    fn obs_mode_parses() {
        assert_eq!("raw".parse::<ObsMode>().unwrap(), ObsMode::Raw);
        assert_eq!("plotted".parse::<ObsMode>().unwrap(), ObsMode::Plotted);
        assert!("both".parse::<ObsMode>().is_err());
    }
}
