//! Front-end energy model.
//!
//! Units: one standard pixel read costs `e_sense_r + e_adc_r` (normally 1).
//! Per-frame terms `e_mem`, `e_com` and `e_mgn` are expressed as fractions of
//! a standard full-frame pixel-read energy, so they scale with array size.
//!
//! Masked frame:   `E_F,mode = E_mem + E_com + e_read·n_read + Σ e_skip,class·n_skip,class`
//! Frame average:  `E_F = (E_F,base + E_mem + (P−1)·E_F,mode)/P + E_M`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{ReadoutLedger, ReadoutMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub e_sense_r: f64,
    pub e_adc_r: f64,
    /// Skipped pixel in a fully gated row (row driver, ramp, counter, comparators off).
    pub e_sense_s_row: f64,
    pub e_adc_s_row: f64,
    /// Skipped pixel inside an active row (comparator + latch gated only).
    pub e_sense_s_reg: f64,
    pub e_adc_s_reg: f64,
    /// Mask-memory access per frame.
    pub e_mem: f64,
    /// Sensor ↔ logic-die communication per masked frame.
    pub e_com: f64,
    /// Mask generator energy, charged per frame as written in the average.
    pub e_mgn: f64,
}

/// Fraction of a full-frame read used for the default `E_mem` and `E_com`.
pub const DEFAULT_OVERHEAD: f64 = 0.005;

/// Share of the per-pixel read energy attributed to sensing (rest is ADC).
const SENSE_SHARE: f64 = 0.5;

impl EnergyParams {
    /// Builds parameters from skip-to-read ratios; the sense/ADC split of each
    /// skip coefficient follows the read split.
    pub fn from_ratios(alpha_row: f64, alpha_reg: f64, e_mem: f64, e_com: f64, e_mgn: f64) -> Self {
        Self {
            e_sense_r: SENSE_SHARE,
            e_adc_r: 1.0 - SENSE_SHARE,
            e_sense_s_row: SENSE_SHARE * alpha_row,
            e_adc_s_row: (1.0 - SENSE_SHARE) * alpha_row,
            e_sense_s_reg: SENSE_SHARE * alpha_reg,
            e_adc_s_reg: (1.0 - SENSE_SHARE) * alpha_reg,
            e_mem,
            e_com,
            e_mgn,
        }
    }

    /// No-overhead parameters with the given skip ratios.
    pub fn ideal(alpha_row: f64, alpha_reg: f64) -> Self {
        Self::from_ratios(alpha_row, alpha_reg, 0.0, 0.0, 0.0)
    }

    pub fn read_energy(&self) -> f64 {
        self.e_sense_r + self.e_adc_r
    }

    pub fn row_skip_energy(&self) -> f64 {
        self.e_sense_s_row + self.e_adc_s_row
    }

    pub fn region_skip_energy(&self) -> f64 {
        self.e_sense_s_reg + self.e_adc_s_reg
    }

    pub fn alpha_row(&self) -> f64 {
        self.row_skip_energy() / self.read_energy()
    }

    pub fn alpha_reg(&self) -> f64 {
        self.region_skip_energy() / self.read_energy()
    }

    /// Skip-to-read ratio of the skip class a mode produces.
    pub fn alpha(&self, mode: ReadoutMode) -> f64 {
        match mode {
            ReadoutMode::Standard => 1.0,
            ReadoutMode::RowSkip => self.alpha_row(),
            ReadoutMode::RegionSkip => self.alpha_reg(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.e_sense_r,
            self.e_adc_r,
            self.e_sense_s_row,
            self.e_adc_s_row,
            self.e_sense_s_reg,
            self.e_adc_s_reg,
            self.e_mem,
            self.e_com,
            self.e_mgn,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invariant(
                "energy parameters must be finite and non-negative".into(),
            ));
        }
        if self.read_energy() <= 0.0 {
            return Err(Error::Invariant(
                "pixel read energy must be positive".into(),
            ));
        }
        if self.e_sense_s_row > self.e_sense_r
            || self.e_sense_s_reg > self.e_sense_r
            || self.e_adc_s_row > self.e_adc_r
            || self.e_adc_s_reg > self.e_adc_r
        {
            return Err(Error::Invariant(
                "skip energies must not exceed read energies".into(),
            ));
        }
        if self.row_skip_energy() > self.region_skip_energy() {
            return Err(Error::Invariant(
                "row-skip pixel energy must not exceed region-skip pixel energy".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EnergyParams {
    /// [`calibrate_paper`] rounded to three places.
    fn default() -> Self {
        Self::from_ratios(0.147, 0.336, DEFAULT_OVERHEAD, DEFAULT_OVERHEAD, 0.0)
    }
}

fn check_ledger(ledger: &ReadoutLedger, mode: ReadoutMode) -> Result<u64> {
    let rows = ledger.total_rows();
    let pixels = ledger.total_pixels();
    if rows == 0 || !pixels.is_multiple_of(rows) {
        return Err(Error::Invariant(format!(
            "ledger covers {pixels} pixels over {rows} rows"
        )));
    }
    let cols = pixels / rows;
    if ledger.n_px_skip_in_gated_row != ledger.n_rows_fully_gated * cols {
        return Err(Error::Invariant(format!(
            "{} pixels skipped in {} gated rows of {cols} columns",
            ledger.n_px_skip_in_gated_row, ledger.n_rows_fully_gated
        )));
    }
    if ledger.n_px_read + ledger.n_px_skip_in_active_row != ledger.n_rows_driven * cols {
        return Err(Error::Invariant(
            "driven rows do not account for read + active-row skipped pixels".into(),
        ));
    }
    match mode {
        ReadoutMode::Standard if pixels != ledger.n_px_read => Err(Error::Invariant(
            "standard-mode ledger contains skipped pixels".into(),
        )),
        ReadoutMode::RowSkip if ledger.n_px_skip_in_active_row != 0 => Err(Error::Invariant(
            "row-skip ledger contains partial-row skips".into(),
        )),
        _ => Ok(pixels),
    }
}

/// Standard full-frame read energy `E_F,base` for an array of `pixels`.
pub fn base_energy(pixels: u64, params: &EnergyParams) -> f64 {
    params.read_energy() * pixels as f64
}

/// Energy of one masked frame from its readout ledger.
///
/// Pixels in fully gated rows use the row-skip coefficients; pixels skipped
/// inside active rows use the region-skip coefficients.
pub fn mode_energy(
    ledger: &ReadoutLedger,
    params: &EnergyParams,
    mode: ReadoutMode,
) -> Result<f64> {
    let pixels = check_ledger(ledger, mode)?;
    let base = base_energy(pixels, params);
    Ok(params.e_mem * base
        + params.e_com * base
        + params.read_energy() * ledger.n_px_read as f64
        + params.row_skip_energy() * ledger.n_px_skip_in_gated_row as f64
        + params.region_skip_energy() * ledger.n_px_skip_in_active_row as f64)
}

/// Period average `(E_F,base + E_mem + (P−1)·E_F,mode)/P + E_M`.
pub fn average_energy(
    e_f_base: f64,
    e_mem: f64,
    e_f_mode: f64,
    period: usize,
    e_m: f64,
) -> Result<f64> {
    if period < 1 {
        return Err(Error::Range("frame period P must be at least 1".into()));
    }
    let p = period as f64;
    Ok((e_f_base + e_mem + (p - 1.0) * e_f_mode) / p + e_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub mode: ReadoutMode,
    pub period: usize,
    pub e_f_base: f64,
    pub e_f_mode: f64,
    pub e_f: f64,
    /// `E_F / (E_F,base + E_mem + E_M)`.
    pub normalized: f64,
    pub reduction_pct: f64,
}

/// Energy report for a masked-frame ledger read at period `period`.
pub fn report(
    ledger: &ReadoutLedger,
    params: &EnergyParams,
    mode: ReadoutMode,
    period: usize,
) -> Result<EnergyReport> {
    params.validate()?;
    let e_f_mode = mode_energy(ledger, params, mode)?;
    let e_f_base = base_energy(ledger.total_pixels(), params);
    let e_mem = params.e_mem * e_f_base;
    let e_m = params.e_mgn * e_f_base;
    let e_f = average_energy(e_f_base, e_mem, e_f_mode, period, e_m)?;
    let normalized = e_f / (e_f_base + e_mem + e_m);
    Ok(EnergyReport {
        mode,
        period,
        e_f_base,
        e_f_mode,
        e_f,
        normalized,
        reduction_pct: 100.0 * (1.0 - normalized),
    })
}

/// Closed-form counterpart of [`report`] for skip ratio `s`, in units of the
/// full-frame read energy.
pub fn closed_form(
    s: f64,
    mode: ReadoutMode,
    period: usize,
    params: &EnergyParams,
) -> Result<EnergyReport> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Range(format!("skip ratio {s} outside [0, 1]")));
    }
    let s = if mode == ReadoutMode::Standard {
        0.0
    } else {
        s
    };
    let e_f_mode = params.e_mem + params.e_com + (1.0 - s) + s * params.alpha(mode);
    let e_f = average_energy(1.0, params.e_mem, e_f_mode, period, params.e_mgn)?;
    let normalized = e_f / (1.0 + params.e_mem + params.e_mgn);
    Ok(EnergyReport {
        mode,
        period,
        e_f_base: 1.0,
        e_f_mode,
        e_f,
        normalized,
        reduction_pct: 100.0 * (1.0 - normalized),
    })
}

/// Normalized front-end energy (fraction of the standard-mode baseline).
pub fn normalized_energy(
    s: f64,
    mode: ReadoutMode,
    period: usize,
    params: &EnergyParams,
) -> Result<f64> {
    Ok(closed_form(s, mode, period, params)?.normalized)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub label: String,
    pub mode: ReadoutMode,
    pub skip: f64,
    pub period: usize,
    /// Target reduction as a fraction, e.g. 0.46.
    pub reduction: f64,
}

impl CalibrationTarget {
    pub fn new(label: &str, mode: ReadoutMode, skip: f64, period: usize, reduction: f64) -> Self {
        Self {
            label: label.to_string(),
            mode,
            skip,
            period,
            reduction,
        }
    }
}

/// Operating points with their reported front-end reductions: BDD100K row
/// skip, ImageNetVID row skip and OpenEDS region skip.
pub fn paper_targets() -> Vec<CalibrationTarget> {
    vec![
        CalibrationTarget::new("bdd100k-row", ReadoutMode::RowSkip, 0.58, 24, 0.46),
        CalibrationTarget::new("imagenetvid-row", ReadoutMode::RowSkip, 0.65, 24, 0.53),
        CalibrationTarget::new("openeds-region", ReadoutMode::RegionSkip, 0.80, 160, 0.52),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    AlphaRow,
    AlphaReg,
    EMem,
    ECom,
    EMgn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: EnergyParams,
    /// Modeled minus target reduction, per target, as fractions.
    pub residuals: Vec<f64>,
    pub sum_sq: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy)]
struct Knobs {
    alpha_row: f64,
    alpha_reg: f64,
    e_mem: f64,
    e_com: f64,
    e_mgn: f64,
}

impl Knobs {
    fn set(&mut self, p: FreeParam, v: f64) {
        match p {
            FreeParam::AlphaRow => self.alpha_row = v,
            FreeParam::AlphaReg => self.alpha_reg = v,
            FreeParam::EMem => self.e_mem = v,
            FreeParam::ECom => self.e_com = v,
            FreeParam::EMgn => self.e_mgn = v,
        }
    }

    /// Feasible interval for `p` given the other knobs (keeps α_row ≤ α_reg).
    fn bounds(&self, p: FreeParam) -> (f64, f64) {
        match p {
            FreeParam::AlphaRow => (0.0, self.alpha_reg),
            FreeParam::AlphaReg => (self.alpha_row, 1.0),
            FreeParam::EMem | FreeParam::ECom | FreeParam::EMgn => (0.0, 1.0),
        }
    }

    fn params(&self) -> EnergyParams {
        EnergyParams::from_ratios(
            self.alpha_row,
            self.alpha_reg,
            self.e_mem,
            self.e_com,
            self.e_mgn,
        )
    }
}

fn residuals(targets: &[CalibrationTarget], params: &EnergyParams) -> Result<Vec<f64>> {
    targets
        .iter()
        .map(|t| Ok(1.0 - normalized_energy(t.skip, t.mode, t.period, params)? - t.reduction))
        .collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn golden_section(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // endpoints win when the optimum sits on a bound
    [lo, mid, hi]
        .into_iter()
        .map(|x| (f(x), x))
        .fold((f64::INFINITY, mid), |best, cur| {
            if cur.0 < best.0 {
                cur
            } else {
                best
            }
        })
        .1
}

/// Least-squares fit of the `free` parameters so modeled reductions match the
/// targets, by cyclic golden-section coordinate descent. Stops when a full
/// sweep improves the squared residual by less than 1e-6 (relative to 1) or
/// after 500 sweeps. Targets that cannot be met show up as residuals.
pub fn calibrate(
    targets: &[CalibrationTarget],
    start: &EnergyParams,
    free: &[FreeParam],
) -> Result<CalibrationResult> {
    if targets.is_empty() {
        return Err(Error::Config(
            "calibration needs at least one target".into(),
        ));
    }
    start.validate()?;
    let mut knobs = Knobs {
        alpha_row: start.alpha_row(),
        alpha_reg: start.alpha_reg(),
        e_mem: start.e_mem,
        e_com: start.e_com,
        e_mgn: start.e_mgn,
    };
    let mut current = sum_sq(&residuals(targets, &knobs.params())?);
    let mut sweeps = 0;
    while sweeps < 500 && !free.is_empty() {
        sweeps += 1;
        let before = current;
        for &p in free {
            let (lo, hi) = knobs.bounds(p);
            let best = golden_section(lo, hi, |v| {
                let mut k = knobs;
                k.set(p, v);
                residuals(targets, &k.params())
                    .map(|r| sum_sq(&r))
                    .unwrap_or(f64::INFINITY)
            });
            let mut k = knobs;
            k.set(p, best);
            let value = sum_sq(&residuals(targets, &k.params())?);
            if value <= current {
                knobs = k;
                current = value;
            }
        }
        if before - current < 1e-6 * 1e-6 {
            break;
        }
    }
    let params = knobs.params();
    let residuals = residuals(targets, &params)?;
    Ok(CalibrationResult {
        params,
        sum_sq: sum_sq(&residuals),
        residuals,
        sweeps,
    })
}

/// The joint fit over the three reported operating points: α_row, α_reg and
/// E_M free, E_mem = E_com = 0.5% of a full-frame read.
pub fn calibrate_paper() -> Result<CalibrationResult> {
    let start = EnergyParams::from_ratios(0.5, 1.0, DEFAULT_OVERHEAD, DEFAULT_OVERHEAD, 0.0);
    calibrate(
        &paper_targets(),
        &start,
        &[FreeParam::AlphaRow, FreeParam::AlphaReg, FreeParam::EMgn],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: ReadoutMode,
    pub skip: f64,
    pub period: usize,
    pub e_f_mode: f64,
    pub e_f: f64,
    pub normalized: f64,
    pub reduction_pct: f64,
}

pub const SWEEP_CSV_HEADER: &str = "mode,s,P,E_F_mode,E_F,normalized,reduction_pct";

/// Closed-form energies over the grid, ordered mode → P → s.
pub fn sweep(
    skips: &[f64],
    periods: &[usize],
    modes: &[ReadoutMode],
    params: &EnergyParams,
) -> Result<Vec<SweepRow>> {
    if skips.is_empty() || periods.is_empty() || modes.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    params.validate()?;
    let mut rows = Vec::with_capacity(skips.len() * periods.len() * modes.len());
    for &mode in modes {
        for &period in periods {
            for &s in skips {
                let r = closed_form(s, mode, period, params)?;
                rows.push(SweepRow {
                    mode,
                    skip: s,
                    period,
                    e_f_mode: r.e_f_mode,
                    e_f: r.e_f,
                    normalized: r.normalized,
                    reduction_pct: r.reduction_pct,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode.name(),
            r.skip,
            r.period,
            r.e_f_mode,
            r.e_f,
            r.normalized,
            r.reduction_pct
        ));
    }
    out
}

pub fn report_csv(reports: &[(f64, EnergyReport)]) -> String {
    let rows: Vec<SweepRow> = reports
        .iter()
        .map(|(s, r)| SweepRow {
            mode: r.mode,
            skip: *s,
            period: r.period,
            e_f_mode: r.e_f_mode,
            e_f: r.e_f,
            normalized: r.normalized,
            reduction_pct: r.reduction_pct,
        })
        .collect();
    sweep_csv(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(read: u64, skip_gated: u64, skip_active: u64, rows: u64, cols: u64) -> ReadoutLedger {
        let gated = skip_gated / cols;
        ReadoutLedger {
            n_rows_driven: rows - gated,
            n_rows_ramp_active: rows - gated,
            n_rows_fully_gated: gated,
            n_px_read: read,
            n_px_skip_in_active_row: skip_active,
            n_px_skip_in_gated_row: skip_gated,
            n_adc_clock_cycles: 0,
        }
    }

    #[test]
    fn mode_energy_cases() {
        let params = EnergyParams::from_ratios(0.1, 0.2, 0.01, 0.02, 0.0);
        let full = ledger(100, 0, 0, 10, 10);
        let e = mode_energy(&full, &params, ReadoutMode::RowSkip).unwrap();
        assert!((e - (1.0 + 2.0 + 100.0)).abs() < 1e-12);

        let zero = EnergyParams::from_ratios(0.0, 0.0, 0.01, 0.02, 0.0);
        let none = ledger(0, 100, 0, 10, 10);
        assert!((mode_energy(&none, &zero, ReadoutMode::RowSkip).unwrap() - 3.0).abs() < 1e-12);

        // 42 read, 58 skipped in gated rows: rows of width 1 make the counts exact
        let p = EnergyParams::from_ratios(0.1, 0.1, 0.0, 0.0, 0.0);
        let l = ReadoutLedger {
            n_rows_driven: 42,
            n_rows_ramp_active: 42,
            n_rows_fully_gated: 58,
            n_px_read: 42,
            n_px_skip_in_active_row: 0,
            n_px_skip_in_gated_row: 58,
            n_adc_clock_cycles: 0,
        };
        assert!((mode_energy(&l, &p, ReadoutMode::RowSkip).unwrap() - (42.0 + 5.8)).abs() < 1e-12);

        let broken = ReadoutLedger {
            n_px_read: 99,
            ..full
        };
        assert!(matches!(
            mode_energy(&broken, &params, ReadoutMode::RowSkip),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn average_energy_cases() {
        assert_eq!(average_energy(100.0, 1.0, 40.0, 1, 2.0).unwrap(), 103.0);
        assert!((average_energy(100.0, 1.0, 40.0, 4, 2.0).unwrap() - 57.25).abs() < 1e-12);
        assert!(average_energy(100.0, 1.0, 40.0, 0, 2.0).is_err());
        // mode = base with no comm energy: only the E_mem share changes with P
        for p in [1, 2, 10, 100] {
            let e = average_energy(100.0, 0.0, 100.0, p, 0.0).unwrap();
            assert!((e - 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_energy_closed_forms() {
        let params = EnergyParams::default();
        assert_eq!(
            normalized_energy(0.0, ReadoutMode::RowSkip, 1, &params).unwrap(),
            1.0
        );
        assert!(normalized_energy(0.0, ReadoutMode::RowSkip, 24, &params).unwrap() >= 1.0);
        let ideal = EnergyParams::ideal(0.0, 0.0);
        assert!(normalized_energy(1.0, ReadoutMode::RowSkip, 1_000_000, &ideal).unwrap() < 1e-5);
        let row = EnergyParams::ideal(0.172, 1.0);
        let e = normalized_energy(0.58, ReadoutMode::RowSkip, 24, &row).unwrap();
        assert!((e - 0.54).abs() < 5e-4, "{e}");
    }

    /// α that makes `(1 + (P−1)(1 − s(1−α)))/P = 1 − reduction` with zero overheads.
    fn alpha_oracle(s: f64, period: f64, reduction: f64) -> f64 {
        let mode = ((1.0 - reduction) * period - 1.0) / (period - 1.0);
        1.0 - (1.0 - mode) / s
    }

    #[test]
    fn single_target_calibration_matches_closed_form() {
        let t = [CalibrationTarget::new(
            "bdd",
            ReadoutMode::RowSkip,
            0.58,
            24,
            0.46,
        )];
        let fit = calibrate(&t, &EnergyParams::ideal(0.5, 1.0), &[FreeParam::AlphaRow]).unwrap();
        let expect = alpha_oracle(0.58, 24.0, 0.46);
        assert!((fit.params.alpha_row() - expect).abs() < 1e-6);
        assert!((fit.params.alpha_row() - 0.172).abs() < 1e-3);

        let t = [CalibrationTarget::new(
            "eds",
            ReadoutMode::RegionSkip,
            0.80,
            160,
            0.52,
        )];
        let fit = calibrate(&t, &EnergyParams::ideal(0.0, 0.5), &[FreeParam::AlphaReg]).unwrap();
        let expect = alpha_oracle(0.80, 160.0, 0.52);
        assert!((fit.params.alpha_reg() - expect).abs() < 1e-6);
        assert!((fit.params.alpha_reg() - 0.346).abs() < 1e-3);
    }

    #[test]
    fn infeasible_target_is_a_residual() {
        let t = [CalibrationTarget::new(
            "x",
            ReadoutMode::RowSkip,
            0.3,
            24,
            0.9,
        )];
        let fit = calibrate(&t, &EnergyParams::ideal(0.5, 1.0), &[FreeParam::AlphaRow]).unwrap();
        assert!(fit.params.alpha_row().abs() < 1e-6);
        assert!(fit.residuals[0] < -0.5);
    }

    #[test]
    fn joint_reference_fit() {
        let fit = calibrate_paper().unwrap();
        fit.params.validate().unwrap();
        for r in &fit.residuals {
            assert!(r.abs() <= 0.03, "{:?}", fit.residuals);
        }
        let d = EnergyParams::default();
        assert!((d.alpha_row() - fit.params.alpha_row()).abs() < 5e-4);
        assert!((d.alpha_reg() - fit.params.alpha_reg()).abs() < 5e-4);
        assert!(fit.params.e_mgn < 5e-4);
    }

    #[test]
    fn sweep_orders_and_csv() {
        let rows = sweep(
            &[0.1, 0.5],
            &[4],
            &[ReadoutMode::RowSkip, ReadoutMode::RegionSkip],
            &EnergyParams::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("mode,s,P,E_F_mode,E_F,normalized,reduction_pct\nrow,0.1,4,"));
        assert!(sweep(&[], &[4], &[ReadoutMode::RowSkip], &EnergyParams::default()).is_err());

        // default grid under the reference fit is monotone in P as well as s
        let params = calibrate_paper().unwrap().params;
        let skips: Vec<f64> = (1..=9).map(|i| f64::from(i) / 10.0).collect();
        for mode in [ReadoutMode::RowSkip, ReadoutMode::RegionSkip] {
            for &s in &skips {
                let e: Vec<f64> = [4, 24, 160]
                    .iter()
                    .map(|&p| normalized_energy(s, mode, p, &params).unwrap())
                    .collect();
                assert!(e[1] <= e[0] && e[2] <= e[1], "{mode:?} s={s}: {e:?}");
            }
        }
    }

    fn valid_params() -> impl Strategy<Value = EnergyParams> {
        (
            0.0f64..1.0,
            0.0f64..1.0,
            0.0f64..0.05,
            0.0f64..0.05,
            0.0f64..0.05,
        )
            .prop_map(|(a, b, m, c, g)| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                EnergyParams::from_ratios(lo, hi, m, c, g)
            })
    }

    proptest! {
        #[test]
        fn row_skip_never_costs_more_than_region_skip(params in valid_params(), s in 0.0f64..=1.0, p in 1usize..400) {
            let row = normalized_energy(s, ReadoutMode::RowSkip, p, &params).unwrap();
            let reg = normalized_energy(s, ReadoutMode::RegionSkip, p, &params).unwrap();
            prop_assert!(row <= reg + 1e-15);
        }

        #[test]
        fn monotone_in_skip_ratio(params in valid_params(), s in 0.0f64..1.0, ds in 0.0f64..1.0, p in 1usize..400) {
            let s2 = (s + ds).min(1.0);
            for mode in [ReadoutMode::RowSkip, ReadoutMode::RegionSkip] {
                let a = normalized_energy(s, mode, p, &params).unwrap();
                let b = normalized_energy(s2, mode, p, &params).unwrap();
                prop_assert!(b <= a + 1e-15);
            }
        }

        /// Longer periods only help once the masked frame costs less than a full
        /// read plus its mask-memory access, i.e. `E_com ≤ s·(1 − α)`.
        #[test]
        fn monotone_in_period_when_masked_frames_are_cheaper(params in valid_params(), s in 0.0f64..=1.0, p in 1usize..400, dp in 1usize..400) {
            for mode in [ReadoutMode::RowSkip, ReadoutMode::RegionSkip] {
                prop_assume!(params.e_com <= s * (1.0 - params.alpha(mode)));
                let a = normalized_energy(s, mode, p, &params).unwrap();
                let b = normalized_energy(s, mode, p + dp, &params).unwrap();
                prop_assert!(b <= a + 1e-15);
            }
        }

        #[test]
        fn monotone_in_skip_coefficients(params in valid_params(), s in 0.0f64..=1.0, p in 1usize..400, bump in 0.0f64..1.0) {
            let row_up = EnergyParams::from_ratios(
                params.alpha_row() + bump * (params.alpha_reg() - params.alpha_row()),
                params.alpha_reg(),
                params.e_mem,
                params.e_com,
                params.e_mgn,
            );
            let a = normalized_energy(s, ReadoutMode::RowSkip, p, &params).unwrap();
            let b = normalized_energy(s, ReadoutMode::RowSkip, p, &row_up).unwrap();
            prop_assert!(b >= a - 1e-15);
        }

        #[test]
        fn unit_at_zero_skip_single_period(params in valid_params()) {
            prop_assert_eq!(normalized_energy(0.0, ReadoutMode::RegionSkip, 1, &params).unwrap(), 1.0);
        }
    }
}
