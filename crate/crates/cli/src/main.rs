//! `moutard-lab`: run declarative scenarios and write CSV tables, field
//! dumps and heatmaps.
//!
//! Exit status: 0 when every configured threshold passes, 1 when one fails,
//! 2 on configuration errors, 3 on numerical refusals. Failures print one
//! line `moutard-lab: <reason>: <detail>` on stderr.

mod heatmap;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moutard_core::grid::write_mfield;
use moutard_core::potential::write_potential;
use moutard_core::scenario::{evaluate_thresholds, study_rows, write_report_csv, LevelOutcome, ScenarioKind};
use moutard_core::seeds::write_history_csv;
use moutard_core::verify::{check_sizes, write_convergence_csv};
use moutard_core::{Error, ErrorKind, Scenario};

#[derive(Parser, Debug)]
#[command(
    name = "moutard-lab",
    version,
    about = "Moutard transforms and gauge reductions, measured"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transform a solution pair of the B-system and measure the residuals.
    DemoTheorem1(Common),
    /// Transform a solution of the A-system through omega_hat.
    DemoProp1(Common),
    /// Remove the A-term of the full system with a gauge factor.
    DemoGauge(Common),
    /// Check the gauge factor built from Lambda.
    DemoRemark(Common),
    /// Refinement study of any scenario kind.
    Convergence(Common),
    /// Evaluate one input field to an MFIELD file.
    DumpField(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for all outputs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "MOUTARD_LAB_THREADS")]
    threads: Option<usize>,
}

enum Outcome {
    Passed,
    ThresholdFailed(usize, usize),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Command::DemoTheorem1(c) => ("demo-theorem1", c),
        Command::DemoProp1(c) => ("demo-prop1", c),
        Command::DemoGauge(c) => ("demo-gauge", c),
        Command::DemoRemark(c) => ("demo-remark", c),
        Command::Convergence(c) => ("convergence", c),
        Command::DumpField(c) => ("dump-field", c),
    };
    if let Some(k) = common.threads {
        if k == 0 {
            eprintln!("moutard-lab: config: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(command, common) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::ThresholdFailed(failed, total)) => {
            eprintln!("moutard-lab: threshold: {failed} of {total} checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("moutard-lab: {}: {e}", e.reason());
            ExitCode::from(match e.kind() {
                ErrorKind::Numerical => 3,
                ErrorKind::Config | ErrorKind::Io => 2,
            })
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_json(&text)
}

fn expect_kind(s: &Scenario, kind: ScenarioKind, command: &str) -> Result<(), Error> {
    if s.kind != kind {
        return Err(Error::Config(format!(
            "{command} needs a {} scenario, got {}",
            kind.as_str(),
            s.kind.as_str()
        )));
    }
    Ok(())
}

fn create(out_dir: &Path, rel: &str) -> Result<BufWriter<File>, Error> {
    let path = out_dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(command: &str, common: &Common) -> Result<Outcome, Error> {
    let scenario = load(&common.config)?;
    let out_dir = &common.out_dir;
    match command {
        "demo-theorem1" => expect_kind(&scenario, ScenarioKind::Theorem1, command)?,
        "demo-prop1" => expect_kind(&scenario, ScenarioKind::Prop1, command)?,
        "demo-gauge" => expect_kind(&scenario, ScenarioKind::Gauge, command)?,
        "demo-remark" => expect_kind(&scenario, ScenarioKind::Remark, command)?,
        "convergence" => check_sizes(&scenario.sizes)?,
        "dump-field" => return dump_field(&scenario, out_dir),
        _ => unreachable!("clap only yields known subcommands"),
    }
    fs::create_dir_all(out_dir)?;

    let levels = scenario.run_levels(&scenario.sizes)?;
    let rows = study_rows(&levels);
    let name = &scenario.name;
    let outputs = &scenario.outputs;

    let csv = outputs.csv.clone().unwrap_or_else(|| format!("{name}-convergence.csv"));
    let mut w = create(out_dir, &csv)?;
    write_convergence_csv(name, &rows, &mut w)?;
    w.flush()?;

    let report = outputs.report.clone().unwrap_or_else(|| format!("{name}-report.csv"));
    let mut w = create(out_dir, &report)?;
    write_report_csv(name, &levels, &mut w)?;
    w.flush()?;

    let finest = levels.last().expect("validated scenarios have sizes");
    if outputs.history {
        for (field, history) in &finest.histories {
            let mut w = create(out_dir, &format!("{name}-history-{field}.csv"))?;
            write_history_csv(history, &mut w)?;
            w.flush()?;
        }
    }
    for out in &outputs.mfields {
        let mut w = create(out_dir, &out.path)?;
        if let Some(p) = finest.potentials.get(&out.field) {
            write_potential(p, &mut w)?;
        } else {
            write_mfield(level_field(finest, &out.field)?, &mut w)?;
        }
        w.flush()?;
    }
    if let Some(h) = &outputs.heatmap {
        let field = match finest.potentials.get(&h.field) {
            Some(p) => &p.omega,
            None => level_field(finest, &h.field)?,
        };
        let mut w = create(out_dir, &h.path)?;
        let (lo, hi) = heatmap::write_ppm(field, &mut w)?;
        w.flush()?;
        let mut w = create(out_dir, &format!("{}.txt", h.path))?;
        heatmap::write_sidecar(&h.field, field, lo, hi, &mut w)?;
        w.flush()?;
    }

    let checks = evaluate_thresholds(&scenario.thresholds, &rows);
    for r in &rows {
        let order = r.order_est.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
        println!("{name} n={} {}={:.6e} order={order}", r.n, r.metric, r.value);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.label);
    }
    Ok(if failed == 0 {
        Outcome::Passed
    } else {
        Outcome::ThresholdFailed(failed, checks.len())
    })
}

fn level_field<'a>(level: &'a LevelOutcome, name: &str) -> Result<&'a moutard_core::MatrixField, Error> {
    level.fields.get(name).ok_or_else(|| {
        let known: Vec<&str> = level
            .fields
            .keys()
            .chain(level.potentials.keys())
            .map(String::as_str)
            .collect();
        Error::Config(format!("no output field {name:?} (available: {})", known.join(", ")))
    })
}

fn dump_field(scenario: &Scenario, out_dir: &Path) -> Result<Outcome, Error> {
    let dump = scenario
        .outputs
        .dump
        .as_ref()
        .ok_or_else(|| Error::Config("dump-field needs outputs.dump".into()))?;
    let field = scenario.input_field(&dump.field, scenario.sizes[0])?;
    let mut w = create(out_dir, &dump.path)?;
    write_mfield(&field, &mut w)?;
    w.flush()?;
    Ok(Outcome::Passed)
}
