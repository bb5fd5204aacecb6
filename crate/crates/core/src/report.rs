//! CSV and JSON renderings of experiment results. Every CSV has a header
//! row and a fixed column order; dB values carry three decimals. Float
//! formatting does not depend on the locale, so output is byte-stable.

use serde::Serialize;

use crate::analysis::PairSweep;
use crate::error::{Error, Result};
use crate::experiment::{Budget, Fig3, ResonanceScan};
use crate::optics::WaistOptimum;

fn db(x: f64) -> String {
    format!("{x:.3}")
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn sci(x: f64) -> String {
    format!("{x:.9e}")
}

fn render(header: &[String], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Consistency(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Consistency(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Consistency(format!("csv: {e}")))
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Consistency(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn budget_csv(b: &Budget) -> Result<String> {
    let rows = b
        .rows
        .iter()
        .map(|r| {
            vec![
                r.stage.clone(),
                db(r.squeezing_db),
                num(r.gain),
                db(r.attenuation_db),
                db(r.attenuation_power_db),
            ]
        })
        .collect();
    render(
        &header(&["stage", "squeezing_db", "gain", "attenuation_db", "attenuation_power_db"]),
        rows,
    )
}

pub fn waist_csv(w: &WaistOptimum) -> Result<String> {
    let rows = w
        .curve
        .iter()
        .map(|(d, t)| vec![num(*d), num(*t)])
        .collect();
    render(&header(&["diameter_um", "total_transmission"]), rows)
}

pub fn resonance_csv(r: &ResonanceScan) -> Result<String> {
    let mut cols = vec!["wavelength_nm".to_string()];
    cols.extend((1..=4).map(|q| format!("transmission_q{q}")));
    cols.extend((1..=4).map(|q| format!("dt_dn_q{q}")));
    let rows = r
        .wavelengths
        .iter()
        .zip(r.transmission.iter().zip(&r.slope))
        .map(|(l, (t, s))| {
            let mut row = vec![num(*l)];
            row.extend(t.iter().map(|x| num(*x)));
            row.extend(s.iter().map(|x| num(*x)));
            row
        })
        .collect();
    render(&cols, rows)
}

/// One row per (pair, voltage): `voltage_mV, pair, snr_tb, snr_cs, snr_opt`.
pub fn sweep_csv(sweeps: &[PairSweep]) -> Result<String> {
    let mut rows = Vec::new();
    for s in sweeps {
        for k in 0..s.tb.points.len() {
            rows.push(vec![
                num(s.tb.points[k].drive_voltage),
                s.pair.label(),
                num(s.tb.points[k].snr),
                num(s.cs.points[k].snr),
                num(s.opt.points[k].snr),
            ]);
        }
    }
    render(&header(&["voltage_mV", "pair", "snr_tb", "snr_cs", "snr_opt"]), rows)
}

/// Analytic and sampled curves side by side.
pub fn fig4_csv(analytic: &[PairSweep], sampled: &[PairSweep]) -> Result<String> {
    let mut rows = Vec::new();
    for (a, s) in analytic.iter().zip(sampled) {
        for k in 0..a.tb.points.len() {
            rows.push(vec![
                num(a.tb.points[k].drive_voltage),
                a.pair.label(),
                a.pair.correlated.to_string(),
                num(a.tb.points[k].snr),
                num(a.cs.points[k].snr),
                num(a.opt.points[k].snr),
                num(s.tb.points[k].snr),
                num(s.cs.points[k].snr),
                num(s.opt.points[k].snr),
            ]);
        }
    }
    render(
        &header(&[
            "voltage_mV",
            "pair",
            "correlated",
            "snr_tb",
            "snr_cs",
            "snr_opt",
            "sampled_snr_tb",
            "sampled_snr_cs",
            "sampled_snr_opt",
        ]),
        rows,
    )
}

pub fn fig3_csv(f: &Fig3) -> Result<String> {
    let mut cols = header(&["quadrant", "frequency_hz", "snl_db", "squeezed_floor_db"]);
    cols.extend(f.drives_mv.iter().map(|v| format!("drive_{v}mV_db")));
    let rows = f
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![(r.quadrant + 1).to_string(), num(r.frequency_hz), db(r.snl_db), db(r.floor_db)];
            row.extend(r.drives_db.iter().map(|x| db(*x)));
            row
        })
        .collect();
    render(&cols, rows)
}

/// Noise floors of every pair, in intensity units and relative to the SNL.
pub fn pairs_csv(sweeps: &[PairSweep]) -> Result<String> {
    let rows = sweeps
        .iter()
        .map(|s| {
            let p = &s.pair;
            vec![
                p.label(),
                p.correlated.to_string(),
                num(p.gain),
                sci(p.s_off_tb),
                sci(p.s_off_cs),
                sci(p.s_off_opt),
                db(p.ratio_db()),
            ]
        })
        .collect();
    render(
        &header(&["pair", "correlated", "gain", "s_off_tb", "s_off_cs", "s_off_opt", "ratio_db"]),
        rows,
    )
}
