mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use vfl_lab::defense::DefenseKind;
use vfl_lab::harness::bench::{bench_defense_scaling, bench_slope, bench_to_csv};
use vfl_lab::harness::experiment::{ablate, prepare, records_to_csv, run_experiment};
use vfl_lab::harness::plot::{ablation_chart, bench_chart};
use vfl_lab::harness::{ExperimentRecord, FailureKind, HarnessError};
use vfl_lab::tensor::Checkpoint;

use args::{Cli, Command};

/// Exit codes: config 2, training 3, I/O 4, anything else 1.
fn exit_code(kind: FailureKind) -> u8 {
    match kind {
        FailureKind::Config => 2,
        FailureKind::Training => 3,
        FailureKind::Io => 4,
        FailureKind::Other => 1,
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn summarize(r: &ExperimentRecord) {
    eprintln!(
        "{} vs {}: mse {:.6e} -> {:.6e} (x{:.3}), accuracy {:.4} -> {:.4} (delta {:+.4}{})",
        r.attack,
        r.defense,
        r.mse_no_defense,
        r.mse_with_defense,
        r.mse_ratio(),
        r.accuracy_no_defense,
        r.accuracy_with_defense,
        r.delta_accuracy,
        if r.accuracy_budget_exceeded {
            ", exceeds accuracy tolerance"
        } else {
            ""
        }
    );
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            experiment,
            seed,
            out,
        } => {
            let cfg = experiment.resolve(seed)?;
            let prepared = prepare(&cfg)?;
            Checkpoint::new(prepared.model).save(&out)?;
            if let Some(acc) = prepared.accuracy_trace.last() {
                eprintln!(
                    "final train accuracy {acc:.4}; checkpoint written to {}",
                    out.display()
                );
            }
        }
        Command::Attack {
            experiment,
            seed,
            out,
        } => {
            let mut cfg = experiment.resolve(Some(seed))?;
            if out.is_some() {
                cfg.output = out;
            }
            let record = run_experiment(&cfg)?;
            summarize(&record);
            if cfg.output.is_none() {
                println!("{}", record.to_json()?);
            }
        }
        Command::Bench {
            defenses,
            classes,
            calls,
            seed,
            defense,
            out,
            plot,
        } => {
            let kinds = defenses
                .iter()
                .map(|&name| defense.build(Some(name), &DefenseKind::None))
                .collect::<Result<Vec<_>, _>>()?;
            let points = bench_defense_scaling(&kinds, &classes, calls, seed)?;
            let csv = bench_to_csv(&points)?;
            write(&out, &csv)?;
            for kind in &kinds {
                if let Some(slope) = bench_slope(&points, &kind.label()) {
                    eprintln!("{}: log-log slope {slope:.3}", kind.label());
                }
            }
            if let Some(path) = plot {
                write(&path, &bench_chart(&csv)?)?;
            }
        }
        Command::Ablate {
            experiment,
            seed,
            epsilons,
            clients,
            out,
            plot,
        } => {
            let cfg = experiment.resolve(Some(seed))?;
            let records = ablate(&cfg, &epsilons, &clients)?;
            for r in &records {
                summarize(r);
            }
            let csv = records_to_csv(&records)?;
            write(&out, &csv)?;
            if let Some(path) = plot {
                write(&path, &ablation_chart(&csv)?)?;
            }
        }
        Command::Report { records, out } => {
            let records = records
                .iter()
                .map(|p| ExperimentRecord::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(r) = records.iter().find(|r| !r.delta_is_consistent()) {
                return Err(HarnessError::Format(format!(
                    "record for {} breaks the accuracy-delta identity",
                    r.defense
                )));
            }
            let csv = records_to_csv(&records)?;
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            FailureKind::Config,
            FailureKind::Training,
            FailureKind::Io,
            FailureKind::Other,
        ]
        .map(exit_code);
        assert_eq!(codes, [2, 3, 4, 1]);
    }

    #[test]
    fn defense_names_cover_every_kind() {
        use args::DefenseName;
        use clap::ValueEnum;
        assert_eq!(DefenseName::value_variants().len(), 6);
    }
}
