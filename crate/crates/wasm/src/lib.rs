//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! Three operations: the front-end energy curve for a mode and period, mask
//! thresholding on a generated scene, and a masked sensor readout of that
//! scene. The page has no trained network, so region scores come from mean
//! region brightness; everything downstream of the scores is the real pipeline.

use roiskip::energy::{self, EnergyParams};
use roiskip::masking::{self, map_to_sensor, region_mask, row_mask, MaskPair};
use roiskip::mgn::ScoreGrid;
use roiskip::scenes::{self, SceneSpec};
use roiskip::sensor::{self, Frame, MaskMemories, ReadoutLedger, ReadoutMode, SensorConfig};
use wasm_bindgen::prelude::*;

pub const CURVE_POINTS: usize = 101;
const PATCH: usize = 16;

pub mod demo {
    use super::*;
    use roiskip::Result;

    pub fn params() -> Result<EnergyParams> {
        Ok(energy::calibrate_paper()?.params)
    }

    /// Normalized energy at `s = i / (CURVE_POINTS - 1)`.
    pub fn energy_curve(
        params: &EnergyParams,
        mode: ReadoutMode,
        period: usize,
    ) -> Result<Vec<f64>> {
        (0..CURVE_POINTS)
            .map(|i| {
                energy::normalized_energy(
                    i as f64 / (CURVE_POINTS - 1) as f64,
                    mode,
                    period,
                    params,
                )
            })
            .collect()
    }

    pub fn scene_frame(seed: u32, index: usize) -> Result<Frame> {
        let spec = SceneSpec {
            length: index + 1,
            seed: u64::from(seed),
            ..SceneSpec::default()
        };
        let mut seq = scenes::generate(&spec)?;
        Ok(seq.frames.swap_remove(index))
    }

    /// Mean brightness per `PATCH×PATCH` region, rescaled so background sits
    /// near 0 and objects near 1.
    pub fn brightness_scores(frame: &Frame) -> Result<ScoreGrid> {
        let spec = SceneSpec::default();
        let (gh, gw) = (frame.rows / PATCH, frame.cols / PATCH);
        let lo = spec.background;
        let hi = spec.object_level;
        let mut scores = Vec::with_capacity(gh * gw);
        for i in 0..gh {
            for j in 0..gw {
                let mut sum = 0.0;
                for r in i * PATCH..(i + 1) * PATCH {
                    sum += frame.values
                        [r * frame.cols + j * PATCH..r * frame.cols + (j + 1) * PATCH]
                        .iter()
                        .sum::<f64>();
                }
                let mean = sum / (PATCH * PATCH) as f64;
                scores.push(((mean - lo) / (hi - lo)).clamp(0.0, 1.0));
            }
        }
        ScoreGrid::new(gh, gw, scores)
    }

    pub fn masks(frame: &Frame, t_reg: f64, t_row: f64) -> Result<MaskPair> {
        let grid = region_mask(&brightness_scores(frame)?, t_reg)?;
        let region = map_to_sensor(&grid, frame.rows, frame.cols, PATCH)?;
        let row = row_mask(&region, t_row, PATCH)?;
        Ok(MaskPair { region, row })
    }

    pub fn sensor(frame: &Frame, mode: ReadoutMode) -> SensorConfig {
        SensorConfig {
            rows: frame.rows,
            cols: frame.cols,
            bit_depth: 10,
            patch: PATCH,
            mode,
        }
    }

    /// Grayscale RGBA of the digital frame, with skipped pixels tinted.
    pub fn readout(
        frame: &Frame,
        pair: &MaskPair,
        mode: ReadoutMode,
    ) -> Result<(Vec<u8>, ReadoutLedger)> {
        let cfg = sensor(frame, mode);
        let mem = if mode == ReadoutMode::Standard {
            MaskMemories::all_ones(&cfg)
        } else {
            sensor::load_masks(pair, &cfg)?
        };
        let (digital, ledger) = sensor::read_frame(frame, &cfg, &mem)?;
        let max = f64::from(digital.max_code());
        let mut rgba = Vec::with_capacity(digital.codes.len() * 4);
        for r in 0..frame.rows {
            for c in 0..frame.cols {
                let read = match mode {
                    ReadoutMode::Standard => true,
                    ReadoutMode::RowSkip => mem.row_mem[r] == 1,
                    ReadoutMode::RegionSkip => mem.region_mem.get(r / PATCH, c / PATCH),
                };
                let g = (f64::from(digital.get(r, c)) / max * 255.0).round() as u8;
                if read {
                    rgba.extend_from_slice(&[g, g, g, 255]);
                } else {
                    rgba.extend_from_slice(&[64, 0, 48, 255]);
                }
            }
        }
        Ok((rgba, ledger))
    }
}

fn js(e: roiskip::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_mode(mode: &str) -> Result<ReadoutMode, JsError> {
    mode.parse::<ReadoutMode>().map_err(js)
}

/// Normalized front-end energy for `s = 0, 0.01, …, 1`.
#[wasm_bindgen(js_name = energyCurve)]
pub fn energy_curve(mode: &str, period: usize) -> Result<Vec<f64>, JsError> {
    let params = demo::params().map_err(js)?;
    demo::energy_curve(&params, parse_mode(mode)?, period).map_err(js)
}

#[wasm_bindgen]
pub struct MaskView {
    region: Vec<u8>,
    row: Vec<u8>,
    grid_cols: usize,
    pixel_skip: f64,
    row_skip: f64,
}

#[wasm_bindgen]
impl MaskView {
    /// Row-major region bits on the sensor region grid.
    #[wasm_bindgen(getter)]
    pub fn region(&self) -> Vec<u8> {
        self.region.clone()
    }

    /// One bit per sensor row.
    #[wasm_bindgen(getter)]
    pub fn row(&self) -> Vec<u8> {
        self.row.clone()
    }

    #[wasm_bindgen(getter, js_name = gridCols)]
    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    #[wasm_bindgen(getter, js_name = pixelSkip)]
    pub fn pixel_skip(&self) -> f64 {
        self.pixel_skip
    }

    #[wasm_bindgen(getter, js_name = rowSkip)]
    pub fn row_skip(&self) -> f64 {
        self.row_skip
    }
}

/// Thresholds region scores of frame `index` of scene `seed`.
#[wasm_bindgen(js_name = maskScene)]
pub fn mask_scene(
    seed: u32,
    index: usize,
    t_reg: f64,
    t_row: f64,
    mode: &str,
) -> Result<MaskView, JsError> {
    let mode = parse_mode(mode)?;
    let frame = demo::scene_frame(seed, index).map_err(js)?;
    let pair = demo::masks(&frame, t_reg, t_row).map_err(js)?;
    let skip =
        masking::skip_ratios(mode, &pair.region, &pair.row, frame.rows, frame.cols).map_err(js)?;
    Ok(MaskView {
        grid_cols: pair.region.cols,
        region: pair.region.bits,
        row: pair.row.bits,
        pixel_skip: skip.pixel,
        row_skip: skip.row,
    })
}

#[wasm_bindgen]
pub struct ReadoutView {
    rgba: Vec<u8>,
    width: usize,
    height: usize,
    ledger: String,
    reduction_pct: f64,
}

#[wasm_bindgen]
impl ReadoutView {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// The seven readout counters as JSON.
    #[wasm_bindgen(getter)]
    pub fn ledger(&self) -> String {
        self.ledger.clone()
    }

    #[wasm_bindgen(getter, js_name = reductionPct)]
    pub fn reduction_pct(&self) -> f64 {
        self.reduction_pct
    }
}

/// Reads the frame through the sensor in `mode` and reports the energy saving
/// at frame period `period`.
#[wasm_bindgen(js_name = readoutScene)]
pub fn readout_scene(
    seed: u32,
    index: usize,
    t_reg: f64,
    t_row: f64,
    mode: &str,
    period: usize,
) -> Result<ReadoutView, JsError> {
    let mode = parse_mode(mode)?;
    let frame = demo::scene_frame(seed, index).map_err(js)?;
    let pair = demo::masks(&frame, t_reg, t_row).map_err(js)?;
    let (rgba, ledger) = demo::readout(&frame, &pair, mode).map_err(js)?;
    let params = demo::params().map_err(js)?;
    let report = energy::report(&ledger, &params, mode, period).map_err(js)?;
    Ok(ReadoutView {
        rgba,
        width: frame.cols,
        height: frame.rows,
        ledger: serde_json::to_string(&ledger).expect("ledger serializes"),
        reduction_pct: report.reduction_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::demo;
    use roiskip::energy;
    use roiskip::masking::labels_from_boxes;
    use roiskip::scenes::{self, SceneSpec};
    use roiskip::sensor::ReadoutMode;

    #[test]
    fn curve_endpoints() {
        let params = demo::params().unwrap();
        let c = demo::energy_curve(&params, ReadoutMode::RowSkip, 1).unwrap();
        assert_eq!(c.len(), super::CURVE_POINTS);
        assert!((c[0] - 1.0).abs() < 1e-12);
        let c = demo::energy_curve(&params, ReadoutMode::RegionSkip, 24).unwrap();
        assert!(c.windows(2).all(|w| w[1] <= w[0]));
        let expect = energy::normalized_energy(0.5, ReadoutMode::RegionSkip, 24, &params).unwrap();
        assert_eq!(c[50], expect);
    }

    #[test]
    fn brightness_masks_cover_objects() {
        let seq = scenes::generate(&SceneSpec {
            length: 1,
            seed: 5,
            ..SceneSpec::default()
        })
        .unwrap();
        let frame = demo::scene_frame(5, 0).unwrap();
        assert_eq!(frame, seq.frames[0]);
        // any region fully inside an object must be kept at a moderate threshold
        let pair = demo::masks(&frame, 0.5, 0.0).unwrap();
        let labels = labels_from_boxes(&seq.boxes[0], 8, 8, 128, 128).unwrap();
        let scores = demo::brightness_scores(&frame).unwrap();
        for i in 0..64 {
            if scores.scores[i] > 0.9 {
                assert_eq!(labels.bits[i], 1);
                assert_eq!(pair.region.bits[i], 1);
            }
        }
    }

    #[test]
    fn readout_tints_skipped_pixels() {
        let frame = demo::scene_frame(1, 2).unwrap();
        let pair = demo::masks(&frame, 0.5, 0.0).unwrap();
        let (rgba, ledger) = demo::readout(&frame, &pair, ReadoutMode::RegionSkip).unwrap();
        assert_eq!(rgba.len(), 128 * 128 * 4);
        let tinted = rgba.chunks(4).filter(|p| p == &[64, 0, 48, 255]).count() as u64;
        assert_eq!(
            tinted,
            ledger.n_px_skip_in_active_row + ledger.n_px_skip_in_gated_row
        );
        let (_, full) = demo::readout(&frame, &pair, ReadoutMode::Standard).unwrap();
        assert_eq!(full.n_px_read, 128 * 128);
    }
}
