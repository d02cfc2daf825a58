mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

macro_rules! config_flags {
    ($($key:ident),* $(,)?) => {
        /// Configuration keys; each overrides the config file value.
        #[derive(Debug, Default, Args)]
        pub struct ConfigFlags {
            /// Config file (TOML). Relative paths inside resolve against its directory.
            #[arg(long, global = true)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long = stringify!($key), global = true, value_name = "VALUE")]
                pub $key: Option<String>,
            )*
        }

        impl ConfigFlags {
            pub fn overrides(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        out.push((stringify!($key).to_string(), v.clone()));
                    }
                )*
                out
            }
        }

        #[cfg(test)]
        const FLAG_KEYS: &[&str] = &[$(stringify!($key)),*];
    };
}

config_flags!(
    seed,
    output_dir,
    prob_dir,
    landcover,
    legend,
    roads,
    buildings,
    reference_barns,
    reference_farms,
    reference,
    regions,
    labels,
    rules,
    models_dir,
    threshold,
    connectivity,
    radii,
    block_size_m,
    folds,
    link_distance_m,
    size_min_m2,
    size_max_m2,
    size_quantiles,
    min_labels_per_class,
    forest_vote,
    classify_farms,
    grid_n_trees,
    grid_max_depth,
    grid_min_split,
    grid_min_leaf,
    grid_max_features,
    population_max_features,
);

#[derive(Debug, Parser)]
#[command(name = "barnmap", version, about = "Barn mapping from segmentation probability rasters")]
struct Cli {
    #[command(flatten)]
    flags: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth and a matching config.
    Synth(commands::SynthArgs),
    /// Filter candidates, group farms, classify and estimate capacity.
    Run,
    /// Spatial cross-validated grid search for the candidate filter.
    TrainFilter,
    /// Train the farm production type classifier.
    TrainType,
    /// Train the farm capacity regressor.
    TrainPop,
    /// Score a run against a synthetic scene's ground truth.
    Eval(commands::EvalArgs),
    /// Print the reports of a finished run.
    Report(commands::ReportArgs),
    /// Serve candidates and accept labels over HTTP.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, &cli.flags),
        Command::Run => commands::run(&cli.flags),
        Command::TrainFilter => commands::train_filter(&cli.flags),
        Command::TrainType => commands::train_type(&cli.flags),
        Command::TrainPop => commands::train_pop(&cli.flags),
        Command::Eval(a) => commands::eval(a, &cli.flags),
        Command::Report(a) => commands::report(a, &cli.flags),
        Command::Serve(a) => serve::serve(a, &cli.flags),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
