use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rosetta_core::datasets::{gen_8gaussians, save_tabular, TabularFormat};
use rosetta_core::distill::{load_rosetta, save_rosetta, select_variant, EmbeddingTable, Selector};
use rosetta_core::vae::{load_checkpoint, save_checkpoint, train, ModelState};
use rosetta_harness::config::{AblationAxis, DatasetSpec, ExperimentConfig, Method, Protocol};
use rosetta_harness::runner::{method_config, method_inputs, trace_csv, MethodSettings};
use rosetta_harness::{export_embeddings, resummarize, run_protocol, HarnessError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rosetta", version, about = "Train, distill and compare anchored VAEs")]
struct Cli {
    /// TOML experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the 8-Gaussians dataset.
    GenData {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        flags: Overrides,
        #[arg(long, default_value = "vae")]
        method: Method,
        /// Anchor set, required for `r_vae`.
        #[arg(long)]
        rosetta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill an anchor set from a trained model.
    Distill {
        #[command(flatten)]
        flags: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hyperparameter search for β and ρ.
    Grid(Overrides),
    /// Reproducibility protocol.
    Repro(Overrides),
    /// Sequential-training protocol.
    Sequential(Overrides),
    /// Sweep one ablation axis.
    Ablate {
        #[command(flatten)]
        flags: Overrides,
        #[arg(long)]
        axis: Option<AblationAxis>,
    },
    /// Write latent means and Cholesky factors of every row.
    Export {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a report's table and summary from its raw metrics.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
    },
}

#[derive(Args, Clone, Default)]
struct DataFlags {
    /// Read data from this file instead of generating it.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<TabularFormat>,
    #[arg(long)]
    n_per_component: Option<usize>,
    #[arg(long)]
    sigma_cluster: Option<f64>,
    #[arg(long)]
    sigma_noise: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[command(flatten)]
    data: DataFlags,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    n_repeats: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    selector: Option<Selector>,
    /// Comma-separated, e.g. `vae,r_vae`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    template_seed: Option<u64>,
    /// Start every run from the same initial weights.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eigen_floor: Option<f64>,
    /// Comma-separated trunk widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Skip the grid search and use the fixed β-VAE β and R-VAE ρ.
    #[arg(long)]
    no_grid: bool,
    #[arg(long)]
    beta_vae_beta: Option<f64>,
    #[arg(long)]
    r_vae_rho: Option<f64>,
    #[arg(long)]
    plateau_window: Option<usize>,
}

fn parse_format(s: &str) -> Result<TabularFormat, String> {
    match s {
        "delimited" | "csv" => Ok(TabularFormat::Delimited),
        "raw" => Ok(TabularFormat::Raw),
        _ => Err(format!("unknown format `{s}` (delimited, raw)")),
    }
}

fn base_config(path: Option<&Path>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl DataFlags {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(path) = &self.data {
            c.dataset = DatasetSpec::File {
                path: path.clone(),
                format: self.format.unwrap_or(TabularFormat::Delimited),
            };
            return;
        }
        if let DatasetSpec::EightGaussians {
            n_per_component,
            sigma_cluster,
            sigma_noise,
            seed,
        } = &mut c.dataset
        {
            if let Some(v) = self.n_per_component {
                *n_per_component = v;
            }
            if let Some(v) = self.sigma_cluster {
                *sigma_cluster = v;
            }
            if let Some(v) = self.sigma_noise {
                *sigma_noise = v;
            }
            if let Some(v) = self.data_seed {
                *seed = v;
            }
        }
    }
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) {
        self.data.apply(c);
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone(); })*
            };
        }
        set!(
            output_dir => output_dir,
            n_repeats => n_repeats,
            k => k,
            selector => selector,
            methods => methods,
            base_seed => base_seed,
            template_seed => template_seed,
            epochs => train.epochs,
            learning_rate => train.learning_rate,
            batch_size => train.batch_size,
            beta => train.beta,
            rho => train.rho,
            eigen_floor => train.eigen_floor,
            hidden => architecture.hidden,
            latent_dim => architecture.latent_dim,
            beta_vae_beta => grid.beta_vae_beta,
            r_vae_rho => grid.r_vae_rho,
            plateau_window => plateau_window,
        );
        if self.init_seed.is_some() {
            c.init_seed = self.init_seed;
        }
        if self.no_grid {
            c.grid.enabled = false;
        }
    }
}

fn configured(cli_config: Option<&Path>, flags: &Overrides, protocol: Option<Protocol>) -> Result<ExperimentConfig, HarnessError> {
    let mut c = base_config(cli_config)?;
    flags.apply(&mut c);
    if let Some(p) = protocol {
        c.protocol = p;
    }
    Ok(c)
}

fn protocol(config: ExperimentConfig) -> Result<serde_json::Value, HarnessError> {
    let out = run_protocol(&config)?;
    let mut value = json!({
        "protocol": config.protocol,
        "written": out.written,
        "runs": out.records.len(),
        "failed_runs": out.records.iter().filter(|r| r.error.is_some()).count(),
    });
    if let Some(g) = out.grid.first() {
        value["beta_star"] = json!(g.beta_star);
        value["rho_star"] = json!(g.rho_star);
    }
    Ok(value)
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::GenData { data, out } => {
            let mut c = base_config(cfg_path)?;
            data.apply(&mut c);
            let DatasetSpec::EightGaussians {
                n_per_component,
                sigma_cluster,
                sigma_noise,
                seed,
            } = c.dataset
            else {
                return Err(HarnessError::Config("gen-data only generates 8-Gaussians data".into()));
            };
            let ds = gen_8gaussians(n_per_component, sigma_cluster, sigma_noise, seed)?;
            save_tabular(&ds, &out, data.format.unwrap_or(TabularFormat::Delimited))?;
            Ok(json!({ "written": [out], "rows": ds.len() }))
        }
        Command::Train {
            flags,
            method,
            rosetta,
            out,
        } => {
            let c = configured(cfg_path, &flags, None)?;
            c.train.validate()?;
            let data = rosetta_harness::load_dataset(&c.dataset)?;
            let anchors = rosetta.as_deref().map(load_rosetta).transpose()?;
            if method.uses_penalty() && anchors.is_none() {
                return Err(HarnessError::Config("r_vae needs --rosetta".into()));
            }
            let settings = MethodSettings {
                beta_vae_beta: flags.beta.unwrap_or(c.grid.beta_vae_beta),
                r_vae_rho: flags.rho.unwrap_or(c.grid.r_vae_rho),
            };
            let tc = method_config(method, &c.train, &settings, c.base_seed);
            let (rows, penalty) = method_inputs(method, &data.inputs, anchors.as_ref());
            let arch = c.architecture.build(data.dim());
            let result = train(ModelState::init(arch, tc.seed)?, &rows, None, penalty, &tc, &mut |_| {})?;
            save_checkpoint(&result.model, &out)?;
            let trace_path = out.with_extension("trace.csv");
            std::fs::write(&trace_path, trace_csv(&result.trace)).map_err(|e| HarnessError::Io {
                path: trace_path.clone(),
                source: e,
            })?;
            Ok(json!({
                "written": [out, trace_path],
                "epochs": result.epochs_run(),
                "model_digest": result.model.digest(),
                "config_digest": tc.digest(),
            }))
        }
        Command::Distill { flags, checkpoint, out } => {
            let c = configured(cfg_path, &flags, None)?;
            let model = load_checkpoint(&checkpoint)?;
            let data = rosetta_harness::load_dataset(&c.dataset)?;
            let table = EmbeddingTable::from_model(&model, &data.inputs)?;
            let rs = select_variant(&table, &data.inputs, c.k, c.selector, c.template_seed)?;
            save_rosetta(&rs, &out)?;
            Ok(json!({ "written": [out], "pairs": rs.len(), "source_indices": rs.source_indices }))
        }
        Command::Grid(flags) => protocol(configured(cfg_path, &flags, Some(Protocol::Grid))?),
        Command::Repro(flags) => protocol(configured(cfg_path, &flags, Some(Protocol::Reproducibility))?),
        Command::Sequential(flags) => protocol(configured(cfg_path, &flags, Some(Protocol::Sequential))?),
        Command::Ablate { flags, axis } => {
            let mut c = configured(cfg_path, &flags, Some(Protocol::Ablation))?;
            if let Some(a) = axis {
                c.ablation.axis = a;
            }
            protocol(c)
        }
        Command::Export { data, checkpoint, out } => {
            let mut c = base_config(cfg_path)?;
            data.apply(&mut c);
            let model = load_checkpoint(&checkpoint)?;
            let ds = rosetta_harness::load_dataset(&c.dataset)?;
            let table = export_embeddings(&model, &ds.inputs)?;
            save_tabular(&table, &out, TabularFormat::Delimited)?;
            Ok(json!({ "written": [out], "rows": table.len(), "cols": table.dim() }))
        }
        Command::Report { dir, name } => Ok(json!({ "written": resummarize(&dir, &name)? })),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
