//! Command-line surface: dataset ingestion, experiment drivers, and CSV
//! emission. The one process boundary of the crate.

pub mod commands;
pub mod config;

pub use commands::{cmd_compare, cmd_curve, cmd_eval, cmd_footprint, cmd_train};
pub use config::{DatasetSpec, ExperimentConfig, SynthParams};

use crate::error::{Error, Result};

const USAGE: &str = "\
tnet - binarized tentacle networks

USAGE
  tnet <command> [--config PATH] [flags] [key=value ...]

COMMANDS
  train       train one network; writes model.tnet and history.csv
  eval        evaluate a saved model; writes eval.txt (key: value lines)
  footprint   print the byte-exact size breakdown per tentacle count
  curve       sweep tentacle counts; writes curve.csv
  compare     template vs bagging vs boosting; writes compare.csv

FLAGS
  --config PATH     apply a key=value config file at this position
  --spec PATH       layer spec file (also: spec=PATH)
  --dataset KIND    cifar10:DIR | csv:PATH | synth
  --model PATH      saved model for eval/footprint
  --out DIR         output directory (default out)
  --seed N          master seed (default 0)
  --tentacles LIST  comma-separated strictly increasing counts (default 1,2,4)
  --train-fp32      train the fp32 baseline for the accuracy reference

Any key=value argument overrides config-file values; later wins.
Keys: spec dataset out seed seeds tentacles n members model fp32_acc
      train_fp32 epochs lr lr_factor patience plateau_tol batch val_split
      momentum gamma_clamp csv_height csv_width synth_seed synth_classes
      synth_channels synth_height synth_width synth_train synth_test
      synth_sigma synth_amplitude

CSV SCHEMAS
  history.csv  epoch,lr,train_loss,val_loss,val_acc
  curve.csv    n,acc,delta_vs_fp32,size_kb
  compare.csv  benchmark,template,delta_pct,members,size_kb,savings_pct

ENVIRONMENT
  TNET_THREADS  cap on worker threads (default: all cores)
";

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TNET_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("TNET_THREADS must be a number, got '{v}'")))?;
        if n == 0 {
            return Err(Error::Config("TNET_THREADS must be at least 1".into()));
        }
        // A pool may already exist when embedded in tests; the cap only
        // applies to the first initializer either way.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run_inner(args: &[String]) -> Result<()> {
    if args.is_empty()
        || matches!(args[0].as_str(), "help" | "--help" | "-h")
    {
        print!("{USAGE}");
        return Ok(());
    }
    init_threads()?;
    let (verb, cfg) = config::parse_args(args)?;
    match verb.as_str() {
        "train" => commands::cmd_train(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        "footprint" => commands::cmd_footprint(&cfg),
        "curve" => commands::cmd_curve(&cfg),
        "compare" => commands::cmd_compare(&cfg),
        other => Err(Error::Config(format!(
            "unknown command '{other}' (try --help)"
        ))),
    }
}

/// Entry point for the binary: 0 on success, 1 with a message on stderr
/// otherwise.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let args: Vec<String> = args.into_iter().collect();
    match run_inner(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_unknown_verbs() {
        assert_eq!(run(["--help".to_string()]), 0);
        assert_eq!(run(["frob".to_string()]), 1);
        assert_eq!(run([] as [String; 0]), 0);
    }

    #[test]
    fn usage_documents_all_csv_columns() {
        for needle in [
            "epoch,lr,train_loss,val_loss,val_acc",
            "n,acc,delta_vs_fp32,size_kb",
            "benchmark,template,delta_pct,members,size_kb,savings_pct",
        ] {
            assert!(USAGE.contains(needle), "usage is missing '{needle}'");
        }
    }
}
