//! The experiment protocols. Each one trains what it needs, writes run
//! artifacts under `<output_dir>/runs/<protocol>` and reports under
//! `<output_dir>/reports`.

use std::path::{Path, PathBuf};

use log::info;
use rosetta_core::datasets::{
    gen_8gaussians, load_tabular, partition_halfplane, split_train_val, Dataset,
};
use rosetta_core::distill::{save_rosetta, select_variant, EmbeddingTable, Selector};
use rosetta_core::linalg::Matrix;
use rosetta_core::metrics::{analyze_map, fit_affine, lsd, variability_of_means, AffineMap};
use rosetta_core::vae::{save_checkpoint, train, Architecture, ModelState, RosettaSet, TrainConfig};
use sha2::{Digest, Sha256};

use crate::config::{AblationAxis, ArchSpec, DatasetSpec, ExperimentConfig, Method, Protocol};
use crate::grid::{grid_csv, grid_search, GridResult};
use crate::report::{write_report, NormRule, RawRow, Report, ReportMeta};
use crate::runner::{method_config, run_batch, write_records, ArtifactDir, MethodSettings, RunRecord, RunResult, RunSpec};
use crate::HarnessError;

/// What a protocol produced. `report` is absent for the grid protocol,
/// which writes its cells directly.
#[derive(Debug)]
pub struct ProtocolOutput {
    pub report: Option<Report>,
    pub grid: Vec<GridResult>,
    pub records: Vec<RunRecord>,
    /// Report files written, in write order.
    pub written: Vec<PathBuf>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, HarnessError> {
    Ok(match spec {
        DatasetSpec::EightGaussians {
            n_per_component,
            sigma_cluster,
            sigma_noise,
            seed,
        } => gen_8gaussians(*n_per_component, *sigma_cluster, *sigma_noise, *seed)?,
        DatasetSpec::File { path, format } => load_tabular(path, *format)?,
    })
}

/// Dispatches on `config.protocol`.
pub fn run_protocol(config: &ExperimentConfig) -> Result<ProtocolOutput, HarnessError> {
    match config.protocol {
        Protocol::Reproducibility => run_reproducibility(config),
        Protocol::Sequential => run_sequential(config),
        Protocol::Grid => run_grid(config),
        Protocol::Ablation => run_ablation(config),
    }
}

fn reports_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("reports")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, body: &str) -> Result<PathBuf, HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, body).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

/// Digest of a set of models, linking report cells to their runs.
fn digest_of<'a>(digests: impl Iterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for d in digests {
        h.update(d.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Trains one model with β = 1 and no penalty, saving its checkpoint.
fn train_reference(
    arch: &Architecture,
    data: &Matrix,
    validation: Option<&Matrix>,
    base: &TrainConfig,
    seed: u64,
    epochs: usize,
    plateau_window: Option<usize>,
    checkpoint: &Path,
) -> Result<ModelState, HarnessError> {
    let config = TrainConfig {
        beta: 1.0,
        rho: 0.0,
        seed,
        epochs,
        plateau_window,
        ..base.clone()
    };
    let out = train(ModelState::init(arch.clone(), seed)?, data, validation, None, &config, &mut |_| {})?;
    if let Some(parent) = checkpoint.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_checkpoint(&out.model, checkpoint)?;
    info!(
        "reference model {} trained for {} epochs{}",
        checkpoint.display(),
        out.epochs_run(),
        if out.stopped_early { " (plateau)" } else { "" }
    );
    Ok(out.model)
}

/// β and ρ for the compared methods: searched on `train`/`val` when the grid
/// is enabled, the configured fixed values otherwise.
fn choose_settings(
    config: &ExperimentConfig,
    arch: &Architecture,
    train: &Matrix,
    val: &Matrix,
    rosetta: &RosettaSet,
    base: &TrainConfig,
) -> Result<(MethodSettings, Option<GridResult>), HarnessError> {
    if !config.grid.enabled {
        return Ok((
            MethodSettings {
                beta_vae_beta: config.grid.beta_vae_beta,
                r_vae_rho: config.grid.r_vae_rho,
            },
            None,
        ));
    }
    let g = grid_search(arch, train, val, rosetta, base, &config.grid, config.template_seed)?;
    Ok((
        MethodSettings {
            beta_vae_beta: g.beta_star,
            r_vae_rho: g.rho_star,
        },
        Some(g),
    ))
}

fn method_specs<'a>(
    config: &ExperimentConfig,
    arch: &Architecture,
    base: &TrainConfig,
    settings: &MethodSettings,
    data: &'a Matrix,
    rosetta: &'a RosettaSet,
    eval: &'a Matrix,
) -> Vec<RunSpec<'a>> {
    let mut specs = Vec::new();
    for &method in &config.methods {
        for i in 0..config.n_repeats {
            let seed = config.base_seed + i as u64;
            specs.push(RunSpec {
                method,
                run: i,
                config: method_config(method, base, settings, seed),
                init_seed: config.init_seed.unwrap_or(seed),
                arch: arch.clone(),
                data,
                validation: None,
                rosetta: Some(rosetta),
                eval,
            });
        }
    }
    specs
}

fn successful(results: &[Option<RunResult>], method: Method) -> Vec<&RunResult> {
    results.iter().flatten().filter(|r| r.method == method).collect()
}

fn settings_notes(settings: &MethodSettings, grid: Option<&GridResult>, config: &ExperimentConfig) -> Vec<(String, String)> {
    let mut notes = Vec::new();
    match grid {
        Some(_) => {
            notes.push((
                "grid".into(),
                format!(
                    "beta={} rho={} (inclusive start:step:end, {} epochs per cell)",
                    config.grid.beta.notation(),
                    config.grid.rho.notation(),
                    config.grid.epochs
                ),
            ));
        }
        None => notes.push(("grid".into(), "disabled".into())),
    }
    notes.push(("beta_vae_beta".into(), settings.beta_vae_beta.to_string()));
    notes.push(("r_vae_rho".into(), settings.r_vae_rho.to_string()));
    notes
}

struct ReproColumn {
    raw: Vec<RawRow>,
    records: Vec<RunRecord>,
    grid: Option<GridResult>,
    settings: MethodSettings,
    rosetta_rows: Vec<usize>,
}

/// Template, distillation, optional grid and the repeated method runs over
/// one dataset, producing per-datum RV rows labelled `column`.
fn repro_column(
    config: &ExperimentConfig,
    data: &Dataset,
    arch_spec: &ArchSpec,
    k: usize,
    selector: Selector,
    column: &str,
    runs_dir: &ArtifactDir,
) -> Result<ReproColumn, HarnessError> {
    let arch = arch_spec.build(data.dim());
    let base = config.train.clone();
    let prefix_root = runs_dir.root.join(&runs_dir.prefix);
    let template = train_reference(
        &arch,
        &data.inputs,
        None,
        &base,
        config.template_seed,
        base.epochs,
        None,
        &prefix_root.join("template.ckpt"),
    )?;
    let table = EmbeddingTable::from_model(&template, &data.inputs)?;
    let rosetta = select_variant(&table, &data.inputs, k, selector, config.template_seed)?;
    save_rosetta(&rosetta, &prefix_root.join("rosetta.csv"))?;

    let (grid_train, grid_val) = split_train_val(data, config.train_fraction, config.template_seed)?;
    let (settings, grid) = choose_settings(config, &arch, &grid_train.inputs, &grid_val.inputs, &rosetta, &base)?;
    if let Some(g) = &grid {
        write_file(&prefix_root.join("grid.csv"), &grid_csv(g))?;
    }

    let specs = method_specs(config, &arch, &base, &settings, &data.inputs, &rosetta, &data.inputs);
    let (results, records) = run_batch(&specs, Some(runs_dir))?;
    write_records(runs_dir, &records)?;

    let mut r1_rows = rosetta.source_indices.clone();
    r1_rows.sort_unstable();
    r1_rows.dedup();
    let rest_rows: Vec<usize> = (0..data.len()).filter(|i| r1_rows.binary_search(i).is_err()).collect();

    let mut raw = Vec::new();
    for &method in &config.methods {
        let ok = successful(&results, method);
        let digest = digest_of(ok.iter().map(|r| r.embeddings.source_digest.as_str()));
        for (metric, rows) in [("rv_r1", &r1_rows), ("rv_rest", &rest_rows)] {
            let push_nan = |raw: &mut Vec<RawRow>| {
                raw.push(RawRow {
                    column: column.to_string(),
                    method: method.name().into(),
                    metric: metric.into(),
                    index: 0,
                    value: f64::NAN,
                    n_runs: ok.len(),
                    digest: digest.clone(),
                })
            };
            if ok.len() < 2 || rows.is_empty() {
                push_nan(&mut raw);
                continue;
            }
            let subsets: Vec<Matrix> = ok.iter().map(|r| r.embeddings.means.select_rows(rows)).collect();
            let refs: Vec<&Matrix> = subsets.iter().collect();
            let v = variability_of_means(&refs, base.eigen_floor)?;
            for (&index, value) in rows.iter().zip(v.per_point) {
                raw.push(RawRow {
                    column: column.to_string(),
                    method: method.name().into(),
                    metric: metric.into(),
                    index,
                    value,
                    n_runs: ok.len(),
                    digest: digest.clone(),
                });
            }
        }
    }
    Ok(ReproColumn {
        raw,
        records,
        grid,
        settings,
        rosetta_rows: r1_rows,
    })
}

fn common_notes(config: &ExperimentConfig) -> Vec<(String, String)> {
    vec![
        ("config_digest".into(), config.digest()),
        ("n_repeats".into(), config.n_repeats.to_string()),
        ("seeds".into(), format!("base_seed + run index, base_seed={}", config.base_seed)),
        ("k".into(), config.k.to_string()),
        ("selector".into(), config.selector.to_string()),
    ]
}

/// Retrains every method `n_repeats` times on the data plus the anchor
/// inputs and reports the per-datum retraining variability, over the anchor
/// rows and over the remaining rows, relative to the VAE median.
pub fn run_reproducibility(config: &ExperimentConfig) -> Result<ProtocolOutput, HarnessError> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    let dataset = config.dataset.name();
    let runs = ArtifactDir::new(&config.output_dir, Path::new("runs").join("repro"));
    let col = repro_column(config, &data, &config.architecture, config.k, config.selector, &dataset, &runs)?;
    let mut notes = common_notes(config);
    notes.extend(settings_notes(&col.settings, col.grid.as_ref(), config));
    notes.push((
        "rosetta_rows".into(),
        col.rosetta_rows.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "),
    ));
    let report = Report {
        meta: ReportMeta {
            name: "repro".into(),
            title: "Retraining variability, median(iqr) over data, minus VAE median".into(),
            dataset,
            eigen_floor: config.train.eigen_floor,
            norm: NormRule {
                reference_method: Method::Vae.name().into(),
                reference_column: None,
                metrics: vec!["rv_r1".into(), "rv_rest".into()],
            },
            notes,
        },
        raw: col.raw,
        series: col.grid.iter().map(|g| ("grid".to_string(), grid_csv(g))).collect(),
    };
    let written = write_report(&report, &reports_dir(config))?;
    Ok(ProtocolOutput {
        report: Some(report),
        grid: col.grid.into_iter().collect(),
        records: col.records,
        written,
    })
}

/// LSD of `source` against `template` on two row groups under one affine
/// map fitted on all rows.
pub fn sequential_lsd(
    source: &Matrix,
    template: &Matrix,
    d1_rows: &[usize],
    d2_rows: &[usize],
) -> Result<(f64, f64, AffineMap), HarnessError> {
    let map = fit_affine(source, template)?;
    let part = |rows: &[usize]| lsd(&map, &source.select_rows(rows), &template.select_rows(rows));
    Ok((part(d1_rows)?, part(d2_rows)?, map))
}

/// Trains a joint template on both halves, a phase-1 model on D1, distills
/// its anchors, then trains each method on D2 plus the anchors and measures
/// how far each result sits from the template on D1 and on D2.
pub fn run_sequential(config: &ExperimentConfig) -> Result<ProtocolOutput, HarnessError> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    let dataset = config.dataset.name();
    let (d1, d2) = partition_halfplane(&data)?;
    let (d1_train, d1_val) = split_train_val(&d1, config.train_fraction, config.template_seed)?;
    let (d2_train, d2_val) = split_train_val(&d2, config.train_fraction, config.template_seed)?;
    let arch = config.architecture.build(data.dim());
    let base = config.train.clone();
    let runs = ArtifactDir::new(&config.output_dir, Path::new("runs").join("sequential"));
    let root = runs.root.join(&runs.prefix);

    let joint_train = d1_train.inputs.vstack(&d2_train.inputs)?;
    let joint_val = d1_val.inputs.vstack(&d2_val.inputs)?;
    let template = train_reference(
        &arch,
        &joint_train,
        Some(&joint_val),
        &base,
        config.template_seed,
        base.epochs,
        Some(config.plateau_window),
        &root.join("template.ckpt"),
    )?;
    let budget = template.provenance.epochs;
    let phase1 = train_reference(
        &arch,
        &d1_train.inputs,
        None,
        &base,
        config.template_seed,
        budget,
        None,
        &root.join("phase1.ckpt"),
    )?;
    let table = EmbeddingTable::from_model(&phase1, &d1_train.inputs)?;
    let rosetta = select_variant(&table, &d1_train.inputs, config.k, config.selector, config.template_seed)?;
    save_rosetta(&rosetta, &root.join("rosetta.csv"))?;

    let method_base = TrainConfig {
        epochs: budget,
        ..base.clone()
    };
    let (settings, grid) = choose_settings(config, &arch, &d2_train.inputs, &d2_val.inputs, &rosetta, &method_base)?;
    if let Some(g) = &grid {
        write_file(&root.join("grid.csv"), &grid_csv(g))?;
    }

    // every D1 row, then every D2 row
    let eval = d1.inputs.vstack(&d2.inputs)?;
    let d1_rows: Vec<usize> = (0..d1.len()).collect();
    let d2_rows: Vec<usize> = (d1.len()..eval.rows()).collect();
    let template_means = template.encode_means(&eval)?;

    let specs = method_specs(config, &arch, &method_base, &settings, &d2_train.inputs, &rosetta, &eval);
    let (results, records) = run_batch(&specs, Some(&runs))?;
    write_records(&runs, &records)?;

    let mut raw = Vec::new();
    let mut series = String::from("method,run,identity_distance,bias_norm");
    for j in 0..arch.latent_dim {
        series.push_str(&format!(",spectrum_{j}"));
    }
    series.push('\n');
    for &method in &config.methods {
        let ok = successful(&results, method);
        let n_runs = ok.len();
        let row = |metric: &str, index: usize, value: f64, digest: &str| RawRow {
            column: dataset.clone(),
            method: method.name().into(),
            metric: metric.into(),
            index,
            value,
            n_runs,
            digest: digest.to_string(),
        };
        if ok.is_empty() {
            for metric in ["lsd_d1", "lsd_d2", "identity_distance", "spectrum_ratio"] {
                raw.push(row(metric, 0, f64::NAN, ""));
            }
            continue;
        }
        let mut per_metric: [Vec<RawRow>; 4] = Default::default();
        for r in ok {
            let digest = &r.embeddings.source_digest;
            let (l1, l2, map) = sequential_lsd(&r.embeddings.means, &template_means, &d1_rows, &d2_rows)?;
            let analysis = analyze_map(&map)?;
            let ratio = match (analysis.spectrum.first(), analysis.spectrum.last()) {
                (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
                _ => f64::NAN,
            };
            per_metric[0].push(row("lsd_d1", r.run, l1, digest));
            per_metric[1].push(row("lsd_d2", r.run, l2, digest));
            per_metric[2].push(row("identity_distance", r.run, analysis.identity_distance, digest));
            per_metric[3].push(row("spectrum_ratio", r.run, ratio, digest));
            series.push_str(&format!(
                "{},{},{:.17e},{:.17e}",
                method, r.run, analysis.identity_distance, analysis.bias_norm
            ));
            for s in &analysis.spectrum {
                series.push_str(&format!(",{s:.17e}"));
            }
            series.push('\n');
        }
        raw.extend(per_metric.into_iter().flatten());
    }

    let mut notes = common_notes(config);
    notes.push(("epoch_budget".into(), format!("{budget} (joint template plateau, window {})", config.plateau_window)));
    notes.extend(settings_notes(&settings, grid.as_ref(), config));
    notes.push(("spectrum_ratio".into(), "smallest over largest eigenvalue of P in A = UP; 1 is flat".into()));
    let mut report_series = vec![("map_analysis".to_string(), series)];
    if let Some(g) = &grid {
        report_series.push(("grid".into(), grid_csv(g)));
    }
    let report = Report {
        meta: ReportMeta {
            name: "sequential".into(),
            title: "Latent space distortion to the joint template, median(iqr) over runs, minus VAE median".into(),
            dataset,
            eigen_floor: base.eigen_floor,
            norm: NormRule {
                reference_method: Method::Vae.name().into(),
                reference_column: None,
                metrics: vec!["lsd_d1".into(), "lsd_d2".into()],
            },
            notes,
        },
        raw,
        series: report_series,
    };
    let written = write_report(&report, &reports_dir(config))?;
    Ok(ProtocolOutput {
        report: Some(report),
        grid: grid.into_iter().collect(),
        records,
        written,
    })
}

/// Sweeps the configured ablation axis, running the reproducibility
/// pipeline once per value.
pub fn run_ablation(config: &ExperimentConfig) -> Result<ProtocolOutput, HarnessError> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    let dataset = config.dataset.name();
    let ab = &config.ablation;
    let mut columns: Vec<(String, ArchSpec, usize, Selector)> = Vec::new();
    let (axis_name, norm) = match ab.axis {
        AblationAxis::RpCount => {
            for &k in &ab.rp_counts {
                columns.push((format!("{k}_rps"), config.architecture.clone(), k, config.selector));
            }
            ("rp_count", NormRule {
                reference_method: Method::Vae.name().into(),
                reference_column: None,
                metrics: vec!["rv_r1".into(), "rv_rest".into()],
            })
        }
        AblationAxis::Selector => {
            for s in Selector::ALL {
                columns.push((s.name().into(), config.architecture.clone(), config.k, s));
            }
            ("selector", NormRule {
                reference_method: Method::RVae.name().into(),
                reference_column: Some(Selector::Kmeans.name().into()),
                metrics: vec!["rv_r1".into(), "rv_rest".into()],
            })
        }
        AblationAxis::Architecture => {
            for v in &ab.architectures {
                let arch = ArchSpec {
                    hidden: v.hidden.clone(),
                    ..config.architecture.clone()
                };
                columns.push((v.name.clone(), arch, config.k, config.selector));
            }
            ("architecture", NormRule {
                reference_method: Method::RVae.name().into(),
                reference_column: Some("same".into()),
                metrics: vec!["rv_r1".into(), "rv_rest".into()],
            })
        }
    };
    if columns.is_empty() {
        return Err(HarnessError::Config(format!("ablation axis {axis_name} has no values")));
    }
    let mut raw = Vec::new();
    let mut records = Vec::new();
    let mut grids = Vec::new();
    let mut notes = common_notes(config);
    notes.push(("axis".into(), axis_name.into()));
    for (label, arch, k, selector) in &columns {
        info!("ablation {axis_name}: {label}");
        let runs = ArtifactDir::new(&config.output_dir, Path::new("runs").join("ablation").join(label));
        let col = repro_column(config, &data, arch, *k, *selector, label, &runs)?;
        raw.extend(col.raw);
        records.extend(col.records);
        notes.push((
            format!("{label}"),
            format!(
                "hidden={:?} k={k} selector={selector} beta_vae_beta={} r_vae_rho={}",
                arch.hidden, col.settings.beta_vae_beta, col.settings.r_vae_rho
            ),
        ));
        grids.extend(col.grid);
    }
    let report = Report {
        meta: ReportMeta {
            name: format!("ablation_{axis_name}"),
            title: format!("Retraining variability across {axis_name}, median(iqr) over data"),
            dataset,
            eigen_floor: config.train.eigen_floor,
            norm,
            notes,
        },
        raw,
        series: Vec::new(),
    };
    let written = write_report(&report, &reports_dir(config))?;
    Ok(ProtocolOutput {
        report: Some(report),
        grid: grids,
        records,
        written,
    })
}

/// Grid search alone: trains the template, distills anchors and writes the
/// scored cells plus the selected values.
pub fn run_grid(config: &ExperimentConfig) -> Result<ProtocolOutput, HarnessError> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    let arch = config.architecture.build(data.dim());
    let root = config.output_dir.join("runs").join("grid");
    let template = train_reference(
        &arch,
        &data.inputs,
        None,
        &config.train,
        config.template_seed,
        config.train.epochs,
        None,
        &root.join("template.ckpt"),
    )?;
    let table = EmbeddingTable::from_model(&template, &data.inputs)?;
    let rosetta = select_variant(&table, &data.inputs, config.k, config.selector, config.template_seed)?;
    let (train_set, val_set) = split_train_val(&data, config.train_fraction, config.template_seed)?;
    let g = grid_search(&arch, &train_set.inputs, &val_set.inputs, &rosetta, &config.train, &config.grid, config.template_seed)?;
    let dir = reports_dir(config);
    let selection = serde_json::json!({
        "beta": config.grid.beta.notation(),
        "rho": config.grid.rho.notation(),
        "epochs": config.grid.epochs,
        "beta_star": g.beta_star,
        "rho_star": g.rho_star,
        "config_digest": config.digest(),
    });
    let written = vec![
        write_file(&dir.join("grid_cells.csv"), &grid_csv(&g))?,
        write_file(
            &dir.join("grid_selection.json"),
            &(serde_json::to_string_pretty(&selection).expect("json") + "\n"),
        )?,
    ];
    Ok(ProtocolOutput {
        report: None,
        grid: vec![g],
        records: Vec::new(),
        written,
    })
}

/// Latent means followed by the row-major Cholesky factor of each row's
/// posterior covariance, as a dataset ready for [`save_tabular`].
///
/// [`save_tabular`]: rosetta_core::datasets::save_tabular
pub fn export_embeddings(model: &ModelState, inputs: &Matrix) -> Result<Dataset, HarnessError> {
    let post = model.encode_batch(inputs)?;
    let d = model.latent_dim();
    let width = d + d * d;
    let mut data = Vec::with_capacity(inputs.rows() * width);
    for r in 0..inputs.rows() {
        let p = post.posterior(r);
        data.extend_from_slice(post.means.row(r));
        data.extend_from_slice(p.chol.as_slice());
    }
    let table = Matrix::new(inputs.rows(), width, data)?;
    Ok(Dataset::new(table, None)?)
}
