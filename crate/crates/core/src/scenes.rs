//! Synthetic video: bright rectangles moving linearly over a dim textured
//! background, with exact per-frame bounding boxes. Stored as numbered 16-bit
//! P5 graymaps plus one `boxes.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::masking::BoundingBox;
use crate::pgm;
use crate::sensor::Frame;

pub const ANNOTATION_FILE: &str = "boxes.json";

/// Largest sample a 16-bit file can express that still lies in `[0, 1)`.
const FULL_SCALE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub n_objects: usize,
    /// Inclusive side-length range in pixels.
    pub size_min: usize,
    pub size_max: usize,
    /// Maximum per-axis speed in pixels per frame.
    pub speed_max: f64,
    pub background: f64,
    pub texture: f64,
    pub object_level: f64,
    /// Per-frame additive noise amplitude.
    pub noise: f64,
    pub length: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            n_objects: 2,
            size_min: 16,
            size_max: 40,
            speed_max: 3.0,
            background: 0.15,
            texture: 0.08,
            object_level: 0.7,
            noise: 0.02,
            length: 8,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.length == 0 {
            return Err(Error::Config(
                "scene dimensions and length must be positive".into(),
            ));
        }
        if self.size_min == 0 || self.size_min > self.size_max {
            return Err(Error::Config(format!(
                "object size range {}..={} is empty",
                self.size_min, self.size_max
            )));
        }
        if self.n_objects > 0 && (self.size_max > self.rows || self.size_max > self.cols) {
            return Err(Error::Config(format!(
                "object size {} exceeds frame {}x{}",
                self.size_max, self.rows, self.cols
            )));
        }
        if !(self.speed_max >= 0.0 && self.speed_max.is_finite()) {
            return Err(Error::Config(
                "speed_max must be finite and non-negative".into(),
            ));
        }
        let levels = [self.background, self.texture, self.object_level, self.noise];
        if levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "intensity levels must be non-negative".into(),
            ));
        }
        if self.background + self.texture + self.noise >= self.object_level {
            return Err(Error::Config(
                "objects must be brighter than the textured background".into(),
            ));
        }
        if self.object_level + self.noise >= 1.0 {
            return Err(Error::Config(
                "object level plus noise must stay below full scale".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub frames: Vec<Frame>,
    pub boxes: Vec<Vec<BoundingBox>>,
}

impl AnnotatedSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

struct Mover {
    w: usize,
    h: usize,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

/// Reflects `pos` into `[0, max]`, flipping `vel` on each bounce.
fn reflect(pos: &mut f64, vel: &mut f64, max: f64) {
    if max <= 0.0 {
        *pos = 0.0;
        return;
    }
    while *pos < 0.0 || *pos > max {
        if *pos < 0.0 {
            *pos = -*pos;
        } else {
            *pos = 2.0 * max - *pos;
        }
        *vel = -*vel;
    }
}

impl Mover {
    fn bbox(&self, rows: usize, cols: usize) -> BoundingBox {
        let x = (self.x.round() as usize).min(cols - self.w);
        let y = (self.y.round() as usize).min(rows - self.h);
        BoundingBox {
            x,
            y,
            w: self.w,
            h: self.h,
        }
    }

    fn advance(&mut self, rows: usize, cols: usize) {
        self.x += self.vx;
        self.y += self.vy;
        reflect(&mut self.x, &mut self.vx, (cols - self.w) as f64);
        reflect(&mut self.y, &mut self.vy, (rows - self.h) as f64);
    }
}

pub fn generate(spec: &SceneSpec) -> Result<AnnotatedSequence> {
    spec.validate()?;
    let (rows, cols) = (spec.rows, spec.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture: Vec<f64> = (0..rows * cols)
        .map(|_| spec.texture * rng.random::<f64>())
        .collect();
    let mut movers: Vec<Mover> = (0..spec.n_objects)
        .map(|_| {
            let w = rng.random_range(spec.size_min..=spec.size_max);
            let h = rng.random_range(spec.size_min..=spec.size_max);
            let mut speed = || {
                if spec.speed_max > 0.0 {
                    rng.random_range(-spec.speed_max..=spec.speed_max)
                } else {
                    0.0
                }
            };
            let (vx, vy) = (speed(), speed());
            Mover {
                w,
                h,
                x: rng.random_range(0.0..=(cols - w) as f64),
                y: rng.random_range(0.0..=(rows - h) as f64),
                vx,
                vy,
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.length);
    let mut boxes = Vec::with_capacity(spec.length);
    for _ in 0..spec.length {
        let frame_boxes: Vec<BoundingBox> = movers.iter().map(|m| m.bbox(rows, cols)).collect();
        let mut values: Vec<f64> = texture.iter().map(|t| spec.background + t).collect();
        for b in &frame_boxes {
            for r in b.y..b.y + b.h {
                values[r * cols + b.x..r * cols + b.x + b.w].fill(spec.object_level);
            }
        }
        for v in &mut values {
            *v += spec.noise * rng.random::<f64>();
        }
        frames.push(Frame::new(rows, cols, values)?);
        boxes.push(frame_boxes);
        for m in &mut movers {
            m.advance(rows, cols);
        }
    }
    Ok(AnnotatedSequence { frames, boxes })
}

/// Concatenates `clips` independent sequences of `spec.length` frames each;
/// clip `i` is generated from a seed derived from `spec.seed` and `i`.
pub fn generate_clips(spec: &SceneSpec, clips: usize) -> Result<AnnotatedSequence> {
    if clips == 0 {
        return Err(Error::Config("at least one clip is required".into()));
    }
    let mut all = AnnotatedSequence {
        frames: Vec::with_capacity(clips * spec.length),
        boxes: Vec::with_capacity(clips * spec.length),
    };
    for i in 0..clips {
        let seed = spec
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(i as u64);
        let clip = generate(&SceneSpec {
            seed,
            ..spec.clone()
        })?;
        all.frames.extend(clip.frames);
        all.boxes.extend(clip.boxes);
    }
    Ok(all)
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

#[derive(Serialize, Deserialize)]
struct Annotations {
    frames: BTreeMap<usize, Vec<BoundingBox>>,
}

pub fn quantize(v: f64) -> u16 {
    (v * 65535.0).round().clamp(0.0, 65535.0) as u16
}

pub fn dequantize(code: u16) -> f64 {
    (f64::from(code) / 65535.0).min(FULL_SCALE)
}

/// Writes the frames and boxes into `dir`, creating it if needed.
pub fn write_sequence(dir: &Path, seq: &AnnotatedSequence) -> Result<()> {
    if seq.frames.len() != seq.boxes.len() {
        return Err(Error::Invariant(format!(
            "{} frames but {} box lists",
            seq.frames.len(),
            seq.boxes.len()
        )));
    }
    for (i, f) in seq.frames.iter().enumerate() {
        let samples: Vec<u16> = f.values.iter().map(|&v| quantize(v)).collect();
        write_atomic(
            &dir.join(frame_file_name(i)),
            &pgm::encode(f.cols, f.rows, 65535, &samples),
        )?;
    }
    let ann = Annotations {
        frames: seq.boxes.iter().cloned().enumerate().collect(),
    };
    write_json(&dir.join(ANNOTATION_FILE), &ann)
}

/// Loads a sequence; the annotation file defines the frame indices, which must
/// run `0..n` with a graymap for each.
pub fn read_sequence(dir: &Path) -> Result<AnnotatedSequence> {
    let ann_path = dir.join(ANNOTATION_FILE);
    let ann: Annotations = read_json(&ann_path)?;
    let name = ann_path.display().to_string();
    for (expect, (&idx, _)) in ann.frames.iter().enumerate() {
        if idx != expect {
            return Err(Error::format(
                &name,
                None,
                format!("frame indices must run 0..n, found {idx} at position {expect}"),
            ));
        }
    }
    if ann.frames.is_empty() {
        return Err(Error::format(
            &name,
            None,
            "annotation file lists no frames",
        ));
    }
    let mut frames = Vec::with_capacity(ann.frames.len());
    let mut boxes = Vec::with_capacity(ann.frames.len());
    let mut dims = None;
    for (idx, frame_boxes) in ann.frames {
        let path: PathBuf = dir.join(frame_file_name(idx));
        let g = pgm::read(&path)?;
        let shown = path.display().to_string();
        if g.maxval != 65535 {
            return Err(Error::format(
                &shown,
                None,
                format!("expected maxval 65535, found {}", g.maxval),
            ));
        }
        match dims {
            None => dims = Some((g.height, g.width)),
            Some(d) if d != (g.height, g.width) => {
                return Err(Error::format(
                    &shown,
                    None,
                    format!(
                        "frame is {}x{}, sequence is {}x{}",
                        g.height, g.width, d.0, d.1
                    ),
                ));
            }
            _ => {}
        }
        for b in &frame_boxes {
            if b.x + b.w > g.width || b.y + b.h > g.height {
                return Err(Error::format(
                    &name,
                    None,
                    format!("box {b:?} of frame {idx} leaves the frame"),
                ));
            }
        }
        let values = g.samples.iter().map(|&c| dequantize(c)).collect();
        frames.push(Frame::new(g.height, g.width, values)?);
        boxes.push(frame_boxes);
    }
    Ok(AnnotatedSequence { frames, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::labels_from_boxes;
    use proptest::prelude::*;

    fn small(n_objects: usize, speed: f64, seed: u64) -> SceneSpec {
        SceneSpec {
            rows: 48,
            cols: 64,
            n_objects,
            size_min: 4,
            size_max: 20,
            speed_max: speed,
            length: 12,
            seed,
            ..SceneSpec::default()
        }
    }

    fn object_pixels(spec: &SceneSpec, f: &Frame) -> Vec<bool> {
        // background never reaches the object level, so brightness identifies object pixels
        f.values.iter().map(|&v| v >= spec.object_level).collect()
    }

    #[test]
    fn empty_scene_is_background() {
        let spec = small(0, 2.0, 3);
        let seq = generate(&spec).unwrap();
        assert_eq!(seq.len(), 12);
        assert!(seq.boxes.iter().all(|b| b.is_empty()));
        for f in &seq.frames {
            assert!(f
                .values
                .iter()
                .all(|&v| v >= spec.background && v < spec.object_level));
        }
    }

    #[test]
    fn static_object_keeps_its_box() {
        let seq = generate(&small(1, 0.0, 9)).unwrap();
        assert!(seq.boxes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn oversized_object_is_rejected() {
        let spec = SceneSpec {
            size_max: 49,
            ..small(1, 1.0, 0)
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn labels_match_rendered_pixels() {
        let spec = SceneSpec {
            length: 30,
            ..small(3, 4.0, 21)
        };
        let seq = generate(&spec).unwrap();
        for (f, b) in seq.frames.iter().zip(&seq.boxes) {
            let lab = labels_from_boxes(b, 6, 8, 48, 64).unwrap();
            let obj = object_pixels(&spec, f);
            let mut raster = vec![0u8; 48];
            for r in 0..48 {
                for c in 0..64 {
                    if obj[r * 64 + c] {
                        raster[(r / 8) * 8 + c / 8] = 1;
                    }
                }
            }
            assert_eq!(lab.bits, raster);
        }
    }

    #[test]
    fn clips_concatenate() {
        let spec = small(1, 2.0, 4);
        let seq = generate_clips(&spec, 3).unwrap();
        assert_eq!(seq.len(), 36);
        assert_ne!(seq.boxes[0], seq.boxes[12]);
        assert!(generate_clips(&spec, 0).is_err());
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let seq = generate(&small(2, 3.0, 5)).unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.boxes, seq.boxes);
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1.0 / 65535.0);
            }
        }
        let text = std::fs::read_to_string(dir.path().join(ANNOTATION_FILE)).unwrap();
        assert!(text.contains("\"frames\""));
        assert!(text.contains("\"11\""));
    }

    #[test]
    fn missing_annotations_fail() {
        let dir = tempfile::tempdir().unwrap();
        let seq = generate(&small(1, 1.0, 0)).unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        std::fs::remove_file(dir.path().join(ANNOTATION_FILE)).unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(ANNOTATION_FILE),
            b"{\"frames\": {\"0\": [ {\"x\": 1,, }]}}",
        )
        .unwrap();
        match read_sequence(dir.path()).unwrap_err() {
            Error::Format { file, offset, .. } => {
                assert!(file.ends_with(ANNOTATION_FILE));
                assert!(offset.is_some());
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn hand_authored_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        // 8x8 frame, dark except a 3x2 block at x=4, y=1 holding full scale
        let mut bytes = b"P5\n# hand written\n8 8\n65535\n".to_vec();
        for r in 0..8 {
            for c in 0..8 {
                let v: u16 = if (1..3).contains(&r) && (4..7).contains(&c) {
                    65535
                } else {
                    1000
                };
                bytes.extend_from_slice(&v.to_be_bytes());
            }
        }
        std::fs::write(dir.path().join("frame_00000.pgm"), bytes).unwrap();
        std::fs::write(
            dir.path().join(ANNOTATION_FILE),
            br#"{ "frames": { "0": [ { "x": 4, "y": 1, "w": 3, "h": 2 } ] } }"#,
        )
        .unwrap();
        let seq = read_sequence(dir.path()).unwrap();
        assert_eq!(
            seq.boxes[0],
            vec![BoundingBox {
                x: 4,
                y: 1,
                w: 3,
                h: 2
            }]
        );
        let f = &seq.frames[0];
        assert!(f.get(1, 4) < 1.0 && f.get(1, 4) > 0.9999);
        assert!((f.get(0, 0) - 1000.0 / 65535.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn boxes_tightly_cover_object_pixels(seed in any::<u64>(), n in 0usize..4, speed in 0.0f64..6.0) {
            let spec = small(n, speed, seed);
            let seq = generate(&spec).unwrap();
            for (f, boxes) in seq.frames.iter().zip(&seq.boxes) {
                let obj = object_pixels(&spec, f);
                for r in 0..spec.rows {
                    for c in 0..spec.cols {
                        let inside = boxes.iter().any(|b| b.contains(r, c));
                        prop_assert_eq!(inside, obj[r * spec.cols + c]);
                    }
                }
                for b in boxes {
                    prop_assert!(b.x + b.w <= spec.cols && b.y + b.h <= spec.rows);
                }
            }
        }

        #[test]
        fn generation_is_deterministic(seed in any::<u64>()) {
            let spec = small(2, 2.5, seed);
            prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
    }
}
