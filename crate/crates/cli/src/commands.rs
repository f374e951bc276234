use std::fmt::Write as _;
use std::path::Path;

use roiskip::energy::{self, EnergyParams};
use roiskip::io::{read_json, write_atomic, write_json};
use roiskip::masking::{
    self, labels_from_boxes, map_to_sensor, region_mask, row_mask, MaskPair, ReadDecision, Schedule,
};
use roiskip::mgn::{self, init_weights, MgnImage, MgnWeights, TrainSample};
use roiskip::scenes::{self, AnnotatedSequence, SceneSpec};
use roiskip::sensor::{self, Frame, MaskMemories, ReadoutLedger, ReadoutMode, SensorConfig};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

pub fn mask_file_name(index: usize) -> String {
    format!("mask_{index:05}.json")
}

pub fn ledger_file_name(index: usize) -> String {
    format!("ledger_{index:05}.json")
}

/// Resizes a sensor frame to the MGN input and patchifies it.
pub fn mgn_input(config: &RunConfig, frame: &Frame) -> Result<MgnImage, CliError> {
    Ok(MgnImage::resized_gray(
        frame.rows,
        frame.cols,
        &frame.values,
        config.mgn.input_h,
        config.mgn.input_w,
    )?)
}

/// Exact per-patch labels on the MGN grid for one frame's boxes.
pub fn grid_labels(
    config: &RunConfig,
    frame: &Frame,
    boxes: &[masking::BoundingBox],
) -> Result<masking::RegionMask, CliError> {
    Ok(labels_from_boxes(
        boxes,
        config.mgn.grid_h(),
        config.mgn.grid_w(),
        frame.rows,
        frame.cols,
    )?)
}

pub fn training_samples(
    config: &RunConfig,
    weights: &MgnWeights,
    seq: &AnnotatedSequence,
) -> Result<Vec<TrainSample>, CliError> {
    seq.frames
        .iter()
        .zip(&seq.boxes)
        .map(|(f, b)| {
            Ok(TrainSample::new(
                weights,
                &mgn_input(config, f)?,
                grid_labels(config, f, b)?.bits,
            )?)
        })
        .collect()
}

/// Predicted grid mask, its sensor-grid mapping and the derived row mask.
pub fn infer_masks(
    config: &RunConfig,
    weights: &MgnWeights,
    frame: &Frame,
) -> Result<(masking::RegionMask, MaskPair), CliError> {
    let (scores, _) = mgn::forward(weights, &mgn_input(config, frame)?)?;
    let grid = region_mask(&scores, config.t_reg)?;
    let region = map_to_sensor(
        &grid,
        config.sensor.rows,
        config.sensor.cols,
        config.sensor.patch,
    )?;
    let row = row_mask(&region, config.t_row, config.sensor.patch)?;
    Ok((grid, MaskPair { region, row }))
}

fn check_sequence(config: &RunConfig, seq: &AnnotatedSequence, dir: &Path) -> Result<(), CliError> {
    let f = &seq.frames[0];
    if (f.rows, f.cols) != (config.sensor.rows, config.sensor.cols) {
        return Err(roiskip::Error::Config(format!(
            "sequence {} is {}x{}, sensor is {}x{}",
            dir.display(),
            f.rows,
            f.cols,
            config.sensor.rows,
            config.sensor.cols
        ))
        .into());
    }
    Ok(())
}

fn load_energy_params(config: &RunConfig) -> Result<EnergyParams, CliError> {
    let params = match &config.energy_params {
        Some(p) => read_json::<EnergyParams>(p)?,
        None => energy::calibrate_paper()?.params,
    };
    params.validate()?;
    Ok(params)
}

pub fn gen(config: &RunConfig) -> Result<Value, CliError> {
    let train = scenes::generate_clips(&config.scene, config.train_clips)?;
    let eval_spec = SceneSpec {
        seed: config.scene.seed.wrapping_add(1),
        ..config.scene.clone()
    };
    let eval = scenes::generate_clips(&eval_spec, config.eval_clips)?;
    let (train_dir, eval_dir) = (
        config.output_dir.join("dataset"),
        config.output_dir.join("heldout"),
    );
    scenes::write_sequence(&train_dir, &train)?;
    scenes::write_sequence(&eval_dir, &eval)?;
    Ok(json!({
        "train_frames": train.len(),
        "eval_frames": eval.len(),
        "train_dir": train_dir,
        "eval_dir": eval_dir,
    }))
}

pub fn train(config: &RunConfig) -> Result<Value, CliError> {
    let dir = config.dataset_dir();
    let seq = scenes::read_sequence(&dir)?;
    check_sequence(config, &seq, &dir)?;
    let weights = init_weights(config.mgn, config.seed)?;
    let samples = training_samples(config, &weights, &seq)?;
    let (weights, history) = mgn::train(weights, &samples, &config.train)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(csv, "{},{}", i + 1, l).unwrap();
    }
    weights.save(&config.weights_path())?;
    write_atomic(&config.output_dir.join("train_loss.csv"), csv.as_bytes())?;
    Ok(json!({
        "samples": samples.len(),
        "epochs": history.len(),
        "final_loss": history.last(),
        "params": weights.param_count(),
        "weights": config.weights_path(),
    }))
}

pub fn mask(config: &RunConfig) -> Result<Value, CliError> {
    let dir = config.eval_dir();
    let seq = scenes::read_sequence(&dir)?;
    check_sequence(config, &seq, &dir)?;
    let weights = MgnWeights::load(&config.weights_path(), &config.mgn)?;
    let (r, c) = (config.sensor.rows, config.sensor.cols);
    let mode = config.sensor.mode;
    let mut csv = String::from("frame,miou,pixel_skip,row_skip\n");
    let (mut miou_sum, mut skip_sum) = (0.0, 0.0);
    for (i, (f, b)) in seq.frames.iter().zip(&seq.boxes).enumerate() {
        let (grid, pair) = infer_masks(config, &weights, f)?;
        let miou = masking::miou(&grid, &grid_labels(config, f, b)?)?;
        let skip = masking::skip_ratios(mode, &pair.region, &pair.row, r, c)?;
        write_json(&config.masks_dir().join(mask_file_name(i)), &pair)?;
        writeln!(csv, "{i},{miou},{},{}", skip.pixel, skip.row).unwrap();
        miou_sum += miou;
        skip_sum += skip.pixel;
    }
    write_atomic(&config.output_dir.join("masks.csv"), csv.as_bytes())?;
    let n = seq.len() as f64;
    Ok(json!({
        "frames": seq.len(),
        "mode": mode.name(),
        "mean_miou": miou_sum / n,
        "mean_pixel_skip": skip_sum / n,
    }))
}

/// Full-read / masked-read decisions for `n` frames at period `period`.
pub fn decisions(period: usize, n: usize) -> Result<Vec<ReadDecision>, CliError> {
    let mut schedule = Schedule::new(period)?;
    (0..n).map(|_| Ok(schedule.step()?)).collect()
}

fn decision_name(d: ReadDecision) -> &'static str {
    match d {
        ReadDecision::FullRead => "full",
        ReadDecision::MaskedRead => "masked",
    }
}

pub fn simulate(config: &RunConfig) -> Result<Value, CliError> {
    let dir = config.eval_dir();
    let seq = scenes::read_sequence(&dir)?;
    check_sequence(config, &seq, &dir)?;
    let standard = SensorConfig {
        mode: ReadoutMode::Standard,
        ..config.sensor
    };
    let out = config.readout_dir();
    let mut csv = String::from(
        "frame,decision,n_rows_driven,n_rows_ramp_active,n_rows_fully_gated,n_px_read,n_px_skip_in_active_row,n_px_skip_in_gated_row,n_adc_clock_cycles\n",
    );
    let mut latched: Option<MaskMemories> = None;
    let mut total = ReadoutLedger::default();
    for (i, (frame, decision)) in seq
        .frames
        .iter()
        .zip(decisions(config.period, seq.len())?)
        .enumerate()
    {
        let (digital, ledger) = match decision {
            ReadDecision::FullRead => {
                let pair: MaskPair = read_json(&config.masks_dir().join(mask_file_name(i)))?;
                latched = Some(if config.sensor.mode == ReadoutMode::Standard {
                    MaskMemories::all_ones(&config.sensor)
                } else {
                    sensor::load_masks(&pair, &config.sensor)?
                });
                sensor::read_frame(frame, &standard, &MaskMemories::all_ones(&standard))?
            }
            ReadDecision::MaskedRead => {
                let masks = latched.as_ref().expect("schedule starts with a full read");
                sensor::read_frame(frame, &config.sensor, masks)?
            }
        };
        ledger.check(config.sensor.rows as u64, config.sensor.cols as u64)?;
        write_atomic(&out.join(scenes::frame_file_name(i)), &digital.to_pgm())?;
        write_json(&out.join(ledger_file_name(i)), &ledger)?;
        let l = &ledger;
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{}",
            decision_name(decision),
            l.n_rows_driven,
            l.n_rows_ramp_active,
            l.n_rows_fully_gated,
            l.n_px_read,
            l.n_px_skip_in_active_row,
            l.n_px_skip_in_gated_row,
            l.n_adc_clock_cycles
        )
        .unwrap();
        total.accumulate(&ledger);
    }
    write_atomic(&config.output_dir.join("readout.csv"), csv.as_bytes())?;
    Ok(json!({
        "frames": seq.len(),
        "mode": config.sensor.mode.name(),
        "period": config.period,
        "n_px_read": total.n_px_read,
        "n_px_skipped": total.n_px_skip_in_active_row + total.n_px_skip_in_gated_row,
    }))
}

fn skip_fraction(l: &ReadoutLedger) -> f64 {
    (l.n_px_skip_in_active_row + l.n_px_skip_in_gated_row) as f64 / l.total_pixels() as f64
}

pub const ENERGY_CSV_HEADER: &str = "frame,mode,s,P,E_F_mode,E_F,normalized,reduction_pct";

/// Per-masked-frame reports from the simulated ledgers, then one `all` row
/// averaging the actual per-frame energies of the whole sequence.
pub fn energy(config: &RunConfig) -> Result<Value, CliError> {
    let params = load_energy_params(config)?;
    let dir = config.readout_dir();
    let mut ledgers = Vec::new();
    while dir.join(ledger_file_name(ledgers.len())).exists() {
        ledgers.push(read_json::<ReadoutLedger>(
            &dir.join(ledger_file_name(ledgers.len())),
        )?);
    }
    if ledgers.is_empty() {
        return Err(roiskip::Error::Config(format!(
            "no ledgers under {}; run simulate first",
            dir.display()
        ))
        .into());
    }
    let mode = config.sensor.mode;
    let p = config.period;
    let mut csv = String::from(ENERGY_CSV_HEADER);
    csv.push('\n');
    let base = energy::base_energy(ledgers[0].total_pixels(), &params);
    let (e_mem, e_m) = (params.e_mem * base, params.e_mgn * base);
    let (mut actual, mut mode_sum, mut skip_sum, mut masked) = (0.0, 0.0, 0.0, 0usize);
    for (i, (l, d)) in ledgers.iter().zip(decisions(p, ledgers.len())?).enumerate() {
        match d {
            ReadDecision::FullRead => actual += base + e_mem,
            ReadDecision::MaskedRead => {
                let rep = energy::report(l, &params, mode, p)?;
                let s = skip_fraction(l);
                writeln!(
                    csv,
                    "{i},{},{s},{p},{},{},{},{}",
                    mode.name(),
                    rep.e_f_mode,
                    rep.e_f,
                    rep.normalized,
                    rep.reduction_pct
                )
                .unwrap();
                actual += rep.e_f_mode;
                mode_sum += rep.e_f_mode;
                skip_sum += s;
                masked += 1;
            }
        }
    }
    let n = ledgers.len() as f64;
    let e_f = actual / n + e_m;
    let normalized = e_f / (base + e_mem + e_m);
    let reduction = 100.0 * (1.0 - normalized);
    let mean = |x: f64| if masked > 0 { x / masked as f64 } else { 0.0 };
    writeln!(
        csv,
        "all,{},{},{p},{},{e_f},{normalized},{reduction}",
        mode.name(),
        mean(skip_sum),
        if masked > 0 {
            (mode_sum / masked as f64).to_string()
        } else {
            String::new()
        }
    )
    .unwrap();
    write_atomic(&config.output_dir.join("energy.csv"), csv.as_bytes())?;
    Ok(json!({
        "frames": ledgers.len(),
        "masked_frames": masked,
        "mean_skip": mean(skip_sum),
        "normalized": normalized,
        "reduction_pct": reduction,
    }))
}

pub fn sweep(config: &RunConfig) -> Result<Value, CliError> {
    let params = load_energy_params(config)?;
    let g = &config.sweep;
    let rows = energy::sweep(&g.skips, &g.periods, &g.modes, &params)?;
    let path = config.output_dir.join("sweep.csv");
    write_atomic(&path, energy::sweep_csv(&rows).as_bytes())?;
    Ok(json!({ "rows": rows.len(), "csv": path }))
}

pub fn calibrate(config: &RunConfig) -> Result<Value, CliError> {
    let start = EnergyParams::from_ratios(
        0.5,
        1.0,
        energy::DEFAULT_OVERHEAD,
        energy::DEFAULT_OVERHEAD,
        0.0,
    );
    let free = [
        energy::FreeParam::AlphaRow,
        energy::FreeParam::AlphaReg,
        energy::FreeParam::EMgn,
    ];
    let fit = energy::calibrate(&config.targets, &start, &free)?;
    write_json(
        &config.output_dir.join("calibration.json"),
        &json!({ "targets": config.targets, "fit": fit }),
    )?;
    write_json(&config.output_dir.join("energy_params.json"), &fit.params)?;
    let residual_pp: Vec<f64> = fit.residuals.iter().map(|r| 100.0 * r).collect();
    Ok(json!({
        "alpha_row": fit.params.alpha_row(),
        "alpha_reg": fit.params.alpha_reg(),
        "e_mgn": fit.params.e_mgn,
        "residuals_pp": residual_pp,
        "sweeps": fit.sweeps,
    }))
}
