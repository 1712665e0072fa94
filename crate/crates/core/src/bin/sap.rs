use clap::{Args, Parser, Subcommand};
use sap_core::data::{generate_planted, read_bank_file, write_bank_file, BankDataset, BankDims, Episode, World};
use sap_core::eval::{evaluate, ActionPrior};
use sap_core::harness::{
    dump_attention, ladder_violations, load_model, prepare_data, run_ablation, run_gradcheck_suite, save_model, write_attention,
    write_report, GradcheckOptions, HarnessError, ModelFile, RunConfig,
};
use sap_core::sap::AblationVariant;
use sap_core::tensor::Fault;
use sap_core::training::{fit, init_params, Labels};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

macro_rules! config_args {
    ($($field:ident => $key:literal),* $(,)?) => {
        /// Run configuration: `--config FILE` first, then individual flags.
        #[derive(Args, Debug, Default)]
        struct ConfigArgs {
            /// `key = value` file; flags given alongside it win.
            #[arg(long)]
            config: Option<PathBuf>,
            $(
                #[arg(long = $key, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl ConfigArgs {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key, v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_args! {
    channels => "channels",
    verbs => "verbs",
    nouns => "nouns",
    frames => "frames",
    per_frame => "per-frame",
    noise_sigma => "noise-sigma",
    distractor_count => "distractor-count",
    global_signal_strength => "global-signal-strength",
    verb_signal_strength => "verb-signal-strength",
    bank_signal_strength => "bank-signal-strength",
    distractor_strength => "distractor-strength",
    decoy_strength => "decoy-strength",
    marker_strength => "marker-strength",
    clutter_per_frame => "clutter-per-frame",
    prior_concentration => "prior-concentration",
    train_size => "train-size",
    val_size => "val-size",
    epochs => "epochs",
    batch_size => "batch-size",
    learning_rate => "learning-rate",
    momentum => "momentum",
    weight_decay => "weight-decay",
    variants => "variants",
    seeds => "seeds",
    output_dir => "output-dir",
    ks => "ks",
    attention_scale => "attention-scale",
    min_count => "min-count",
    eval_train => "eval-train",
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "sap", version, about = "Two-branch verb/noun recognition with symbiotic attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train and validation splits as SAPB files.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Generator seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one variant and save the model as JSON.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "full")]
        variant: AblationVariant,
        #[arg(long)]
        seed: Option<u64>,
        /// Train on this SAPB file instead of a generated split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to `<output-dir>/model.json`.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Score a saved model.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the generated validation split of `--seed`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the ablation ladder over all configured variants and seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Exit with status 1 unless the component ordering holds on mean noun top-1.
        #[arg(long)]
        check_ordering: bool,
    },
    /// Finite-difference check of every primitive and the composed loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Corrupt the sigmoid derivative, to see the check fail.
        #[arg(long, hide = true)]
        inject_sigmoid_fault: bool,
    },
    /// Write per-row attention weights of a `full` model for one clip.
    DumpAttention {
        #[command(flatten)]
        config: ConfigArgs,
        /// Saved model; an untrained model from `--seed` when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// SAPB file to take the clip from; a generated validation clip when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Defaults to `<output-dir>/attention.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn bank_dims(cfg: &RunConfig) -> BankDims {
    BankDims {
        channels: cfg.spec.channels,
        verbs: cfg.spec.verbs,
        nouns: cfg.spec.nouns,
        frames: cfg.spec.frames,
        per_frame: cfg.spec.per_frame,
    }
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Loads a SAPB file and aligns the model dimensions with its header.
fn load_data(path: &Path, cfg: &mut RunConfig) -> Result<Vec<Episode>, HarnessError> {
    let data = read_bank_file(path)?;
    cfg.spec.channels = data.dims.channels;
    cfg.spec.verbs = data.dims.verbs;
    cfg.spec.nouns = data.dims.nouns;
    Ok(data.episodes)
}

fn print_eval(e: &sap_core::eval::Evaluation) {
    for t in &e.topk {
        println!(
            "top-{}: verb {:.4}  noun {:.4}  action {:.4}  action (no prior) {:.4}",
            t.k, t.verb, t.noun, t.action, t.action_raw
        );
    }
    if e.fallbacks > 0 {
        println!("{} clips had an empty bank and used the baseline path", e.fallbacks);
    }
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::GenData { config, seed } => {
            let cfg = config.resolve()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (_, train, val) = prepare_data(&cfg, seed)?;
            create_dir(&cfg.output_dir)?;
            for (name, episodes) in [("train", train), ("val", val)] {
                let path = cfg.output_dir.join(format!("{name}.sapb"));
                let n = episodes.len();
                write_bank_file(
                    &path,
                    &BankDataset {
                        dims: bank_dims(&cfg),
                        episodes,
                    },
                )?;
                println!("wrote {n} clips to {}", path.display());
            }
        }
        Command::Train {
            config,
            variant,
            seed,
            data,
            model_out,
        } => {
            let mut cfg = config.resolve()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let train = match &data {
                Some(p) => load_data(p, &mut cfg)?,
                None => prepare_data(&cfg, seed)?.1,
            };
            let mut params = init_params(cfg.dims(), seed);
            let metrics = fit(&train, &mut params, variant, &cfg.sap_config(), &cfg.train_config(seed))?;
            for m in &metrics {
                println!(
                    "epoch {:>3}: verb {:.6}  noun {:.6}  total {:.6}",
                    m.epoch, m.verb_loss, m.noun_loss, m.total_loss
                );
            }
            let labels: Vec<Labels> = train.iter().map(|e| e.labels).collect();
            let prior = ActionPrior::estimate_with_min_count(&labels, cfg.spec.verbs, cfg.spec.nouns, cfg.min_count)?;
            let path = model_out.unwrap_or_else(|| cfg.output_dir.join("model.json"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            save_model(
                &ModelFile {
                    variant,
                    sap_config: cfg.sap_config(),
                    params,
                    prior,
                },
                &path,
            )?;
            println!("saved {variant} model to {}", path.display());
        }
        Command::Eval {
            config,
            model,
            data,
            seed,
        } => {
            let mut cfg = config.resolve()?;
            let model = load_model(&model)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let episodes = match &data {
                Some(p) => load_data(p, &mut cfg)?,
                None => prepare_data(&cfg, seed)?.2,
            };
            let e = evaluate(&model.params, &episodes, &model.prior, model.variant, &model.sap_config, &cfg.ks)?;
            println!("{} on {} clips", model.variant, episodes.len());
            print_eval(&e);
        }
        Command::Ablate { config, check_ordering } => {
            let cfg = config.resolve()?;
            let report = run_ablation(&cfg)?;
            let paths = write_report(&report, &cfg.output_dir)?;
            print!("{}", report.summary.render());
            println!("results: {}", paths.csv.display());
            if check_ordering {
                let failures = ladder_violations(&report.summary, &cfg.spec);
                for f in &failures {
                    println!("ordering violated: {f}");
                }
                if !failures.is_empty() {
                    return Ok(ExitCode::from(1));
                }
                println!("ordering holds");
            }
        }
        Command::Gradcheck {
            tolerance,
            step,
            seeds,
            inject_sigmoid_fault,
        } => {
            let report = run_gradcheck_suite(&GradcheckOptions {
                tolerance,
                step,
                seeds,
                fault: inject_sigmoid_fault.then_some(Fault::SigmoidDerivative),
            });
            print!("{}", report.render());
            if !report.passed() {
                for f in report.failures() {
                    println!(
                        "failed: {} seed {} worst relative error {:.3e} at coordinate {}",
                        f.component, f.seed, f.worst_error, f.worst_index
                    );
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::DumpAttention {
            config,
            model,
            data,
            seed,
            index,
            out,
        } => {
            let mut cfg = config.resolve()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let episodes = match &data {
                Some(p) => load_data(p, &mut cfg)?,
                None => {
                    let world = World::new(&cfg.spec_for(seed))?;
                    generate_planted(&world, index + 1, 1)?
                        .into_iter()
                        .map(|p| p.episode)
                        .collect()
                }
            };
            let Some(episode) = episodes.get(index) else {
                return Err(sap_core::harness::ConfigError::Invalid(format!(
                    "clip index {index} out of range for {} clips",
                    episodes.len()
                ))
                .into());
            };
            let (params, sap_cfg) = match &model {
                Some(p) => {
                    let m = load_model(p)?;
                    (m.params, m.sap_config)
                }
                None => (init_params(cfg.dims(), seed), cfg.sap_config()),
            };
            let report = dump_attention(&params, episode, &sap_cfg)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("attention.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_attention(&report, &path)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
