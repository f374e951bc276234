//! Score thresholding, row-mask derivation, grid mapping, full/masked frame
//! scheduling, ground-truth rasterization and mask metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgn::ScoreGrid;
use crate::sensor::ReadoutMode;

/// Binary grid of `p×p` regions in row-major order; 1 = read, 0 = skip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<u8>,
}

impl RegionMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape(
                "RegionMask::new",
                format!("{rows}x{cols}"),
                format!("{} bits", bits.len()),
            ));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Range("mask bits must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn filled(rows: usize, cols: usize, bit: bool) -> Self {
        Self {
            rows,
            cols,
            bits: vec![u8::from(bit); rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col] == 1
    }

    pub fn row_bits(&self, row: usize) -> &[u8] {
        &self.bits[row * self.cols..(row + 1) * self.cols]
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }
}

/// One bit per row (region-grid rows or sensor rows, depending on context).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMask {
    pub rows: usize,
    pub bits: Vec<u8>,
}

impl RowMask {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Range("mask bits must be 0 or 1".into()));
        }
        Ok(Self {
            rows: bits.len(),
            bits,
        })
    }

    pub fn filled(rows: usize, bit: bool) -> Self {
        Self {
            rows,
            bits: vec![u8::from(bit); rows],
        }
    }

    pub fn get(&self, row: usize) -> bool {
        self.bits[row] == 1
    }

    /// Repeats each bit `factor` times.
    pub fn expand(&self, factor: usize) -> RowMask {
        let bits: Vec<u8> = self
            .bits
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b, factor))
            .collect();
        RowMask {
            rows: bits.len(),
            bits,
        }
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }
}

/// Region mask plus the row mask derived from it; the on-disk mask file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPair {
    pub region: RegionMask,
    pub row: RowMask,
}

fn check_unit_open(t: f64, name: &str) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Range(format!("{name} must lie in (0, 1), got {t}")))
    }
}

/// A region is active iff its score is strictly above `t_reg`.
pub fn region_mask(scores: &ScoreGrid, t_reg: f64) -> Result<RegionMask> {
    check_unit_open(t_reg, "t_reg")?;
    let bits = scores.scores.iter().map(|&s| u8::from(s > t_reg)).collect();
    RegionMask::new(scores.gh, scores.gw, bits)
}

/// Per region-grid row: active iff the fraction of active regions is strictly
/// above `t_row`.
pub fn region_row_mask(mask: &RegionMask, t_row: f64) -> Result<RowMask> {
    if !(0.0..1.0).contains(&t_row) {
        return Err(Error::Range(format!(
            "t_row must lie in [0, 1), got {t_row}"
        )));
    }
    let bits = (0..mask.rows)
        .map(|r| {
            let active = mask.row_bits(r).iter().filter(|&&b| b == 1).count();
            u8::from(active as f64 / mask.cols as f64 > t_row)
        })
        .collect();
    RowMask::new(bits)
}

/// [`region_row_mask`] expanded so every region row covers `patch` sensor rows.
pub fn row_mask(mask: &RegionMask, t_row: f64, patch: usize) -> Result<RowMask> {
    Ok(region_row_mask(mask, t_row)?.expand(patch))
}

/// Nearest-neighbour mapping of a mask onto the `(r/patch) × (c/patch)` sensor
/// region grid: a sensor region takes the bit of the cell its centre falls in.
pub fn map_to_sensor(
    mask: &RegionMask,
    sensor_rows: usize,
    sensor_cols: usize,
    patch: usize,
) -> Result<RegionMask> {
    if patch == 0 || !sensor_rows.is_multiple_of(patch) || !sensor_cols.is_multiple_of(patch) {
        return Err(Error::shape(
            "map_to_sensor",
            format!("sensor {sensor_rows}x{sensor_cols}"),
            format!("patch {patch}"),
        ));
    }
    let (gh, gw) = (sensor_rows / patch, sensor_cols / patch);
    let mut bits = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        // centre (i + ½)/gh scaled to the source grid, in exact integer form
        let si = (2 * i + 1) * mask.rows / (2 * gh);
        for j in 0..gw {
            let sj = (2 * j + 1) * mask.cols / (2 * gw);
            bits.push(mask.bits[si * mask.cols + sj]);
        }
    }
    RegionMask::new(gh, gw, bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadDecision {
    /// Read every pixel and recompute the mask from this frame.
    FullRead,
    /// Skip according to the mask stored at the last full read.
    MaskedRead,
}

/// Full read every `period` frames; the `period − 1` frames after it reuse the
/// stored mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    period: usize,
    frame_index: usize,
    mask_ready: bool,
}

impl Schedule {
    pub fn new(period: usize) -> Result<Self> {
        Self::resume(period, 0)
    }

    /// A schedule positioned at `frame_index` with no stored mask.
    pub fn resume(period: usize, frame_index: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::Range("frame period P must be at least 1".into()));
        }
        Ok(Self {
            period,
            frame_index,
            mask_ready: false,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn step(&mut self) -> Result<ReadDecision> {
        let decision = if self.frame_index.is_multiple_of(self.period) {
            self.mask_ready = true;
            ReadDecision::FullRead
        } else if self.mask_ready {
            ReadDecision::MaskedRead
        } else {
            return Err(Error::State(format!(
                "masked read at frame {} before any full read",
                self.frame_index
            )));
        };
        self.frame_index += 1;
        Ok(decision)
    }
}

/// Axis-aligned box in pixels: columns `x..x+w`, rows `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

fn cell_span(index: usize, cells: usize, pixels: usize) -> (usize, usize) {
    (index * pixels / cells, (index + 1) * pixels / cells)
}

/// Grid cell is 1 iff its pixel footprint overlaps any box with nonzero area.
pub fn labels_from_boxes(
    boxes: &[BoundingBox],
    grid_rows: usize,
    grid_cols: usize,
    image_h: usize,
    image_w: usize,
) -> Result<RegionMask> {
    if grid_rows == 0 || grid_cols == 0 || grid_rows > image_h || grid_cols > image_w {
        return Err(Error::shape(
            "labels_from_boxes",
            format!("grid {grid_rows}x{grid_cols}"),
            format!("image {image_h}x{image_w}"),
        ));
    }
    let mut mask = RegionMask::filled(grid_rows, grid_cols, false);
    for b in boxes.iter().filter(|b| b.area() > 0) {
        let (bx1, by1) = ((b.x + b.w).min(image_w), (b.y + b.h).min(image_h));
        for i in 0..grid_rows {
            let (y0, y1) = cell_span(i, grid_rows, image_h);
            if b.y >= y1 || by1 <= y0 {
                continue;
            }
            for j in 0..grid_cols {
                let (x0, x1) = cell_span(j, grid_cols, image_w);
                if b.x < x1 && bx1 > x0 {
                    mask.bits[i * grid_cols + j] = 1;
                }
            }
        }
    }
    Ok(mask)
}

/// Two-class mean IoU over {active, inactive}; an empty union scores 1.
pub fn miou(pred: &RegionMask, gt: &RegionMask) -> Result<f64> {
    if (pred.rows, pred.cols) != (gt.rows, gt.cols) {
        return Err(Error::shape(
            "miou",
            format!("{}x{}", pred.rows, pred.cols),
            format!("{}x{}", gt.rows, gt.cols),
        ));
    }
    Ok(miou_bits(&pred.bits, &gt.bits))
}

pub(crate) fn miou_bits(pred: &[u8], gt: &[u8]) -> f64 {
    let iou = |class: u8| {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.iter().zip(gt) {
            let (pi, gi) = (p == class, g == class);
            inter += usize::from(pi && gi);
            union += usize::from(pi || gi);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    (iou(1) + iou(0)) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipRatios {
    /// Skipped pixels / total pixels in a masked frame.
    pub pixel: f64,
    /// Sensor rows never driven / total sensor rows.
    pub row: f64,
}

/// Skip ratios of a masked frame in `mode`.
///
/// `region` must be on the sensor region grid and `row` must have one bit per
/// sensor row. In region-skip mode a sensor row is skipped iff no region
/// overlapping it is active.
pub fn skip_ratios(
    mode: ReadoutMode,
    region: &RegionMask,
    row: &RowMask,
    sensor_rows: usize,
    sensor_cols: usize,
) -> Result<SkipRatios> {
    if row.rows != sensor_rows {
        return Err(Error::shape(
            "skip_ratios",
            format!("{sensor_rows} rows"),
            format!("row mask {}", row.rows),
        ));
    }
    if region.rows == 0
        || !sensor_rows.is_multiple_of(region.rows)
        || !sensor_cols.is_multiple_of(region.cols)
    {
        return Err(Error::shape(
            "skip_ratios",
            format!("sensor {sensor_rows}x{sensor_cols}"),
            format!("region grid {}x{}", region.rows, region.cols),
        ));
    }
    Ok(match mode {
        ReadoutMode::Standard => SkipRatios {
            pixel: 0.0,
            row: 0.0,
        },
        ReadoutMode::RowSkip => {
            let skipped = row.bits.iter().filter(|&&b| b == 0).count() as f64 / sensor_rows as f64;
            SkipRatios {
                pixel: skipped,
                row: skipped,
            }
        }
        ReadoutMode::RegionSkip => {
            let pixel = 1.0 - region.active_count() as f64 / region.bits.len() as f64;
            let dead_region_rows = (0..region.rows)
                .filter(|&r| region.row_bits(r).iter().all(|&b| b == 0))
                .count();
            SkipRatios {
                pixel,
                row: dead_region_rows as f64 / region.rows as f64,
            }
        }
    })
}
