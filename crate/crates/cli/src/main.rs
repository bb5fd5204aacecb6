use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pqsense::experiment::{
    calibrate_scenario, optimize_beam, resonance_scan, verify_options, Experiment,
};
use pqsense::montecarlo::run_oracle_suite;
use pqsense::report;
use pqsense::scenario::Scenario;
use pqsense::{Error, Result};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "pqsense", version, about = "Twin-beam quadrant plasmonic sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true, default_value = "scenarios/default.toml")]
    scenario: PathBuf,

    /// Overrides the scenario's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Sample count: oracle samples for `verify`, spectrum averages for sampled sweeps.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Output directory (defaults to the scenario's).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the effective scenario as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Stage-by-stage squeezing and attenuation table.
    SqueezingBudget,
    /// Beam diameter maximizing transmission through the sensor windows.
    OptimizeBeam,
    /// Sensor transmission and transduction versus wavelength.
    ResonanceScan,
    /// SNR versus drive voltage for all sixteen quadrant pairs.
    SnrSweep,
    /// Run the oracle suite.
    Verify,
    /// Noise-power spectra around the modulation frequency.
    Fig3,
    /// SNR sweeps with sampled noise and the enhancement reports.
    Fig4,
    /// Fit the scenario to the stage and threshold targets.
    Calibrate,
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::validation("threads", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Consistency(format!("thread pool: {e}")))?;
    }
    let mut scenario = Scenario::load(&cli.scenario)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if cli.dump_config {
        print!("{}", scenario.to_toml_string()?);
        return Ok(ExitCode::SUCCESS);
    }
    if cli.samples == Some(0) {
        return Err(Error::validation("samples", "must be >= 1"));
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&scenario.output.dir));
    fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    let averages = cli.samples.unwrap_or(scenario.sweep.averages);

    match cli.command {
        Command::SqueezingBudget => {
            let b = Experiment::new(&scenario)?.budget()?;
            write(&out, "budget.csv", &report::budget_csv(&b)?)?;
            write(&out, "budget.json", &report::json(&b)?)?;
            for r in &b.rows {
                println!(
                    "{:<10} {:>8.3} dB   g = {:.4} ({:.3} dB)",
                    r.stage, r.squeezing_db, r.gain, r.attenuation_db
                );
            }
        }
        Command::OptimizeBeam => {
            let w = optimize_beam(&scenario)?;
            write(&out, "waist_scan.csv", &report::waist_csv(&w)?)?;
            write(&out, "waist_optimum.json", &report::json(&w)?)?;
            println!(
                "optimum diameter {:.1} µm, transmission {:.4}, unimodal {}",
                w.diameter, w.total, w.unimodal
            );
        }
        Command::ResonanceScan => {
            let r = resonance_scan(&scenario, 700.0, 900.0, 0.5)?;
            write(&out, "resonance_scan.csv", &report::resonance_csv(&r)?)?;
            let summary = json!({
                "wavelength_nm": scenario.modulation.wavelength_nm,
                "transmission": r.at_probe,
                "dt_dn": r.slope_at_probe,
            });
            write(&out, "resonance.json", &report::json(&summary)?)?;
            for q in 0..4 {
                println!("q{}: T = {:.4}, dT/dn = {:.3} /RIU", q + 1, r.at_probe[q], r.slope_at_probe[q]);
            }
        }
        Command::SnrSweep => {
            let e = Experiment::new(&scenario)?;
            let sweeps = e.sweeps()?;
            let reports = sweeps
                .iter()
                .map(pqsense::analysis::EnhancementReport::from_sweep)
                .collect::<Result<Vec<_>>>()?;
            write(&out, "snr_sweep.csv", &report::sweep_csv(&sweeps)?)?;
            write(&out, "snr_pairs.csv", &report::pairs_csv(&sweeps)?)?;
            write(&out, "snr_sweep.json", &report::json(&reports)?)?;
            for r in &reports {
                println!(
                    "{}: V_TB {:.1} mV, V_CS {:.1} mV, V_opt {:.1} mV, enhancement {:.2}%",
                    r.pair, r.v_tb, r.v_cs, r.v_opt, r.enhancement_pct
                );
            }
        }
        Command::Verify => {
            let mut opts = verify_options(&scenario);
            if let Some(n) = cli.samples {
                opts.samples = n;
            }
            let r = run_oracle_suite(&opts)?;
            write(&out, "verify.json", &report::json(&r)?)?;
            for c in &r.checks {
                println!(
                    "{} {:<32} {} = {:.4e} (threshold {:.1e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.metric,
                    c.value,
                    c.threshold
                );
            }
            if !r.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Fig3 => {
            let f = Experiment::new(&scenario)?.fig3()?;
            write(&out, "fig3.csv", &report::fig3_csv(&f)?)?;
            write(&out, "fig3.json", &report::json(&f.quadrants)?)?;
            for q in &f.quadrants {
                println!("q{}: squeezed floor {:.3} dB", q.quadrant + 1, q.floor_db);
            }
        }
        Command::Fig4 => {
            let f = Experiment::new(&scenario)?.fig4(averages, scenario.seed)?;
            write(&out, "fig4.csv", &report::fig4_csv(&f.analytic, &f.sampled)?)?;
            let summary = json!({
                "seed": f.seed,
                "averages": f.averages,
                "correlated": f.correlated(),
                "pairs": f.reports,
                "sampled_pairs": f.sampled_reports,
            });
            write(&out, "fig4_enhancement.json", &report::json(&summary)?)?;
            for r in f.correlated() {
                println!(
                    "{}: V_TB {:.1} mV, V_CS {:.1} mV, enhancement {:.2}%",
                    r.pair, r.v_tb, r.v_cs, r.enhancement_pct
                );
            }
        }
        Command::Calibrate => {
            let (s, c) = calibrate_scenario(&scenario)?;
            write(&out, "calibrated.toml", &s.to_toml_string()?)?;
            write(&out, "calibration.json", &report::json(&c)?)?;
            let p = &c.source.params;
            println!(
                "G = {:.4}, excess = ({:.4e}, {:.4e}), cell {:.4} µm",
                p.gain, p.excess_correlated, p.excess_uncorrelated, c.cell_size
            );
            for r in &c.source.residuals {
                println!(
                    "{:<8} target {:>7.3} dB, model {:>7.3} dB{}",
                    r.stage,
                    r.target_db,
                    r.model_db,
                    if r.within_tolerance { "" } else { "  (out of tolerance)" }
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
