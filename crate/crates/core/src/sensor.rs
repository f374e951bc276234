//! Reconfigurable CIS readout: pixel array, row driver, mask memories and
//! column-parallel single-slope ADCs with power gating.
//!
//! Gating per mode, for a row that is not read:
//! * row-skip: row driver off, shared ramp + counter gated (S1/S2), column
//!   comparators + latches gated (S3), latches reset so the row transmits 0s;
//! * region-skip: a row with no active region is gated the same way; in an
//!   active row the ramp and counter stay on and only the comparators/latches
//!   of masked columns are gated (S3), which output 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{MaskPair, RegionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    Standard,
    RowSkip,
    RegionSkip,
}

impl ReadoutMode {
    pub fn name(self) -> &'static str {
        match self {
            ReadoutMode::Standard => "standard",
            ReadoutMode::RowSkip => "row",
            ReadoutMode::RegionSkip => "region",
        }
    }
}

impl std::str::FromStr for ReadoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ReadoutMode::Standard),
            "row" | "row_skip" => Ok(ReadoutMode::RowSkip),
            "region" | "region_skip" => Ok(ReadoutMode::RegionSkip),
            other => Err(Error::Config(format!("unknown readout mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub rows: usize,
    pub cols: usize,
    /// ADC resolution N; 8 or 10.
    pub bit_depth: u32,
    /// Region side p in pixels.
    pub patch: usize,
    pub mode: ReadoutMode,
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(
                "sensor dimensions and patch must be nonzero".into(),
            ));
        }
        if !self.rows.is_multiple_of(self.patch) || !self.cols.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "sensor {}x{} not divisible by patch {}",
                self.rows, self.cols, self.patch
            )));
        }
        if !matches!(self.bit_depth, 8 | 10) {
            return Err(Error::Config(format!(
                "bit depth must be 8 or 10, got {}",
                self.bit_depth
            )));
        }
        Ok(())
    }

    pub fn grid_rows(&self) -> usize {
        self.rows / self.patch
    }

    pub fn grid_cols(&self) -> usize {
        self.cols / self.patch
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }
}

/// Normalized analog pixel values in `[0, 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Frame {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "Frame::new",
                format!("{rows}x{cols}"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::Range(format!(
                "analog pixel value {v} outside [0, 1)"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// N-bit codes per pixel; skipped pixels are 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitalFrame {
    pub rows: usize,
    pub cols: usize,
    pub bit_depth: u32,
    pub codes: Vec<u16>,
}

impl DigitalFrame {
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.codes[row * self.cols + col]
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    /// 16-bit big-endian P5 graymap with maxval `2^N − 1`.
    pub fn to_pgm(&self) -> Vec<u8> {
        crate::pgm::encode(self.cols, self.rows, self.max_code(), &self.codes)
    }
}

/// Per-frame activation counts for the energy model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadoutLedger {
    pub n_rows_driven: u64,
    pub n_rows_ramp_active: u64,
    pub n_rows_fully_gated: u64,
    pub n_px_read: u64,
    pub n_px_skip_in_active_row: u64,
    pub n_px_skip_in_gated_row: u64,
    pub n_adc_clock_cycles: u64,
}

impl ReadoutLedger {
    pub fn total_pixels(&self) -> u64 {
        self.n_px_read + self.n_px_skip_in_active_row + self.n_px_skip_in_gated_row
    }

    pub fn total_rows(&self) -> u64 {
        self.n_rows_driven + self.n_rows_fully_gated
    }

    /// Checks the pixel and row partitions against the sensor size.
    pub fn check(&self, rows: u64, cols: u64) -> Result<()> {
        if self.total_pixels() != rows * cols {
            return Err(Error::Invariant(format!(
                "pixel counters sum to {} but the array has {}",
                self.total_pixels(),
                rows * cols
            )));
        }
        if self.total_rows() != rows {
            return Err(Error::Invariant(format!(
                "row counters sum to {} but the array has {rows} rows",
                self.total_rows()
            )));
        }
        Ok(())
    }

    pub fn accumulate(&mut self, other: &ReadoutLedger) {
        self.n_rows_driven += other.n_rows_driven;
        self.n_rows_ramp_active += other.n_rows_ramp_active;
        self.n_rows_fully_gated += other.n_rows_fully_gated;
        self.n_px_read += other.n_px_read;
        self.n_px_skip_in_active_row += other.n_px_skip_in_active_row;
        self.n_px_skip_in_gated_row += other.n_px_skip_in_gated_row;
        self.n_adc_clock_cycles += other.n_adc_clock_cycles;
    }
}

/// Single-slope conversion: the shared ramp crosses the sample after `code`
/// counter cycles, so `code = floor(v·2^N)` and the count is the cycle cost.
pub fn adc_convert(v: f64, bits: u32) -> Result<(u16, u64)> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Range(format!("ADC input {v} outside [0, 1)")));
    }
    if !(1..=16).contains(&bits) {
        return Err(Error::Range(format!(
            "ADC resolution {bits} bits unsupported"
        )));
    }
    let code = (v * f64::from(1u32 << bits)).floor() as u32;
    let code = code.min((1u32 << bits) - 1) as u16;
    Ok((code, u64::from(code)))
}

/// Row mask (`1×r`) and region mask (`(r/p)×(c/p)`) memories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMemories {
    pub row_mem: Vec<u8>,
    pub region_mem: RegionMask,
}

impl MaskMemories {
    pub fn all_ones(config: &SensorConfig) -> Self {
        Self {
            row_mem: vec![1; config.rows],
            region_mem: RegionMask::filled(config.grid_rows(), config.grid_cols(), true),
        }
    }

    pub fn is_all_ones(&self) -> bool {
        self.row_mem.iter().all(|&b| b == 1) && self.region_mem.is_all_ones()
    }

    pub fn footprint_bits(&self) -> usize {
        self.row_mem.len() + self.region_mem.bits.len()
    }

    pub fn footprint_bytes(&self) -> usize {
        self.footprint_bits().div_ceil(8)
    }

    fn check(&self, config: &SensorConfig) -> Result<()> {
        if self.row_mem.len() != config.rows {
            return Err(Error::shape(
                "mask memories",
                format!("row memory for {} rows", config.rows),
                format!("{} bits", self.row_mem.len()),
            ));
        }
        if (self.region_mem.rows, self.region_mem.cols) != (config.grid_rows(), config.grid_cols())
        {
            return Err(Error::shape(
                "mask memories",
                format!("region grid {}x{}", config.grid_rows(), config.grid_cols()),
                format!("{}x{}", self.region_mem.rows, self.region_mem.cols),
            ));
        }
        Ok(())
    }
}

/// Mask memory footprint in bytes for a sensor geometry.
pub fn mask_memory_bytes(rows: usize, cols: usize, patch: usize) -> usize {
    (rows + (rows / patch) * (cols / patch)).div_ceil(8)
}

/// Stores a region mask (already on the sensor grid) and its sensor-row mask.
pub fn load_masks(masks: &MaskPair, config: &SensorConfig) -> Result<MaskMemories> {
    config.validate()?;
    let mem = MaskMemories {
        row_mem: masks.row.bits.clone(),
        region_mem: masks.region.clone(),
    };
    mem.check(config)?;
    Ok(mem)
}

/// Reads one frame through the configured mode.
pub fn read_frame(
    frame: &Frame,
    config: &SensorConfig,
    masks: &MaskMemories,
) -> Result<(DigitalFrame, ReadoutLedger)> {
    config.validate()?;
    if (frame.rows, frame.cols) != (config.rows, config.cols) {
        return Err(Error::shape(
            "read_frame",
            format!("sensor {}x{}", config.rows, config.cols),
            format!("frame {}x{}", frame.rows, frame.cols),
        ));
    }
    masks.check(config)?;
    if config.mode == ReadoutMode::Standard && !masks.is_all_ones() {
        return Err(Error::Config(
            "standard mode requires all-ones row and region masks".into(),
        ));
    }

    let (r, c, p) = (config.rows, config.cols, config.patch);
    let mut codes = vec![0u16; r * c];
    let mut ledger = ReadoutLedger::default();
    for row in 0..r {
        let region_row = masks.region_mem.row_bits(row / p);
        let row_active = match config.mode {
            ReadoutMode::Standard => true,
            ReadoutMode::RowSkip => masks.row_mem[row] == 1,
            ReadoutMode::RegionSkip => region_row.contains(&1),
        };
        if !row_active {
            // latches reset: the row transmits zeros
            ledger.n_rows_fully_gated += 1;
            ledger.n_px_skip_in_gated_row += c as u64;
            continue;
        }
        ledger.n_rows_driven += 1;
        ledger.n_rows_ramp_active += 1;
        for col in 0..c {
            let column_enabled = config.mode != ReadoutMode::RegionSkip || region_row[col / p] == 1;
            if !column_enabled {
                ledger.n_px_skip_in_active_row += 1;
                continue;
            }
            let (code, cycles) = adc_convert(frame.values[row * c + col], config.bit_depth)?;
            codes[row * c + col] = code;
            ledger.n_px_read += 1;
            ledger.n_adc_clock_cycles += cycles;
        }
    }
    debug_assert!(ledger.check(r as u64, c as u64).is_ok());
    Ok((
        DigitalFrame {
            rows: r,
            cols: c,
            bit_depth: config.bit_depth,
            codes,
        },
        ledger,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::RowMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(rows: usize, cols: usize, mode: ReadoutMode) -> SensorConfig {
        SensorConfig {
            rows,
            cols,
            bit_depth: 10,
            patch: 16,
            mode,
        }
    }

    fn random_frame(rows: usize, cols: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn adc_cases() {
        assert_eq!(adc_convert(0.0, 10).unwrap(), (0, 0));
        assert_eq!(adc_convert(0.5, 10).unwrap().0, 512);
        assert_eq!(adc_convert(0.5, 8).unwrap().0, 128);
        assert_eq!(adc_convert(1023.4 / 1024.0, 10).unwrap(), (1023, 1023));
        assert!(adc_convert(1.0, 10).is_err());
        assert!(adc_convert(-0.1, 10).is_err());
    }

    #[test]
    fn memory_footprint_for_vga_class_sensor() {
        let cfg = SensorConfig {
            rows: 400,
            cols: 640,
            ..config(400, 640, ReadoutMode::RegionSkip)
        };
        let mem = MaskMemories::all_ones(&cfg);
        assert_eq!(mem.footprint_bits(), 400 + 1000);
        assert_eq!(mem.footprint_bytes(), 175);
        assert_eq!(mask_memory_bytes(400, 640, 16), 175);
        assert!(mem.footprint_bytes() < 5 * 1024);
    }

    #[test]
    fn load_masks_checks_dims() {
        let cfg = config(400, 640, ReadoutMode::RegionSkip);
        let bad = MaskPair {
            region: RegionMask::filled(14, 14, true),
            row: RowMask::filled(400, true),
        };
        assert!(load_masks(&bad, &cfg).is_err());
        let ok = MaskPair {
            region: RegionMask::filled(25, 40, true),
            row: RowMask::filled(400, true),
        };
        let mem = load_masks(&ok, &cfg).unwrap();
        let std_cfg = SensorConfig {
            mode: ReadoutMode::Standard,
            ..cfg
        };
        read_frame(&random_frame(400, 640, 1), &std_cfg, &mem).unwrap();
    }

    #[test]
    fn standard_mode_rejects_masks() {
        let cfg = config(32, 32, ReadoutMode::Standard);
        let mut mem = MaskMemories::all_ones(&cfg);
        mem.row_mem[3] = 0;
        assert!(matches!(
            read_frame(&random_frame(32, 32, 0), &cfg, &mem),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn all_zero_row_mask_blanks_the_frame() {
        let cfg = config(32, 32, ReadoutMode::RowSkip);
        let mut mem = MaskMemories::all_ones(&cfg);
        mem.row_mem.iter_mut().for_each(|b| *b = 0);
        let (out, ledger) = read_frame(&random_frame(32, 32, 2), &cfg, &mem).unwrap();
        assert!(out.codes.iter().all(|&c| c == 0));
        assert_eq!(ledger.n_px_read, 0);
        assert_eq!(ledger.n_rows_fully_gated, 32);
    }

    #[test]
    fn single_active_region_counts() {
        let cfg = config(64, 64, ReadoutMode::RegionSkip);
        let mut region = RegionMask::filled(4, 4, false);
        region.bits[0] = 1;
        let mem = MaskMemories {
            row_mem: vec![1; 64],
            region_mem: region,
        };
        let (_, l) = read_frame(&random_frame(64, 64, 3), &cfg, &mem).unwrap();
        assert_eq!(l.n_px_read, 256);
        assert_eq!(l.n_rows_driven, 16);
        assert_eq!(l.n_rows_fully_gated, 48);
        assert_eq!(l.n_px_skip_in_active_row, 16 * 48);
        assert_eq!(l.n_px_skip_in_gated_row, 48 * 64);
    }

    #[test]
    fn standard_cycles_equal_code_sum() {
        let cfg = config(32, 48, ReadoutMode::Standard);
        let (out, l) = read_frame(
            &random_frame(32, 48, 4),
            &cfg,
            &MaskMemories::all_ones(&cfg),
        )
        .unwrap();
        assert_eq!(
            l.n_adc_clock_cycles,
            out.codes.iter().map(|&c| u64::from(c)).sum::<u64>()
        );
    }

    #[test]
    fn row_skip_matches_region_skip_on_whole_row_masks() {
        let cfg = config(64, 64, ReadoutMode::RowSkip);
        let region_rows = [1u8, 0, 0, 1];
        let region =
            RegionMask::new(4, 4, region_rows.iter().flat_map(|&b| [b; 4]).collect()).unwrap();
        let mem = MaskMemories {
            row_mem: region_rows.iter().flat_map(|&b| [b; 16]).collect(),
            region_mem: region,
        };
        let frame = random_frame(64, 64, 5);
        let (a, _) = read_frame(&frame, &cfg, &mem).unwrap();
        let (b, _) = read_frame(
            &frame,
            &SensorConfig {
                mode: ReadoutMode::RegionSkip,
                ..cfg
            },
            &mem,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pgm_export_header() {
        let cfg = config(16, 32, ReadoutMode::Standard);
        let (out, _) = read_frame(
            &random_frame(16, 32, 6),
            &cfg,
            &MaskMemories::all_ones(&cfg),
        )
        .unwrap();
        let bytes = out.to_pgm();
        assert!(bytes.starts_with(b"P5\n32 16\n1023\n"));
        assert_eq!(bytes.len(), b"P5\n32 16\n1023\n".len() + 16 * 32 * 2);
    }
}
