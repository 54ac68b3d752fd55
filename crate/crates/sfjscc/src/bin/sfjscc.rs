//! Command-line front end for the fusion-based broadcasting toolkit.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sfjscc::datahub::{synthesize_corpus, DatasetSpec, Split};
use sfjscc::harness::{
    self, audit_channel_uses, count_scheme_parameters, default_run_config, plots, PerformancePoint,
    RunConfig, Scheme,
};
use sfjscc::jscc::cbr_channel_uses;
use sfjscc::similarity::{median, similarity_matrix, SimilarityMetric};

#[derive(Parser)]
#[command(name = "sfjscc", about = "Fusion-based semantic image transmission over a degraded broadcast channel", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Broadcasting scheme.
    #[arg(long, value_parser = parse_scheme, default_value = "sf")]
    scheme: Scheme,
    /// SF fusion ratio.
    #[arg(long)]
    alpha: Option<f64>,
    /// TD channel-use ratio.
    #[arg(long)]
    beta: Option<f64>,
    /// PA power ratio.
    #[arg(long)]
    gamma: Option<f64>,
    /// SIC power coefficient of the better user.
    #[arg(long)]
    zeta: Option<f64>,
    /// Better user's SNR in dB (evaluation).
    #[arg(long)]
    snr1: Option<f64>,
    /// SNR gap to the worse user in dB.
    #[arg(long)]
    gap: Option<f64>,
    /// CSI estimation-error std in dB.
    #[arg(long)]
    sigma_e: Option<f64>,
    /// Channel bandwidth ratio; sets n = round(cbr * 3HW).
    #[arg(long)]
    cbr: Option<f64>,
    /// Dataset directory (CIFAR-format .bin files or a PNG/JPEG folder).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Training-split size the dataset directory holds.
    #[arg(long, default_value_t = 5000)]
    train_count: usize,
    /// Test-split size the dataset directory holds.
    #[arg(long, default_value_t = 512)]
    test_count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    /// Full run config as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a dataset directory, synthesizing a corpus if absent.
    Ingest {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Train (or resume) the configured scheme.
    Train {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Evaluate a trained checkpoint over the SNR grid.
    Eval {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Sweep the scheme ratio at a fixed SNR pair and plot the region.
    Region {
        #[command(flatten)]
        opts: CommonOpts,
        /// Comma-separated ratio grid.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// RV2 / |Pearson| similarity matrices of encoded features.
    Similarity {
        #[command(flatten)]
        opts: CommonOpts,
        /// Number of test images to encode.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// The SIC capacity + external-codec baseline.
    Baseline {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Robustness sweeps over sigma_e and the SNR gap.
    Sweep {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        sigma_e_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9")]
        gap_grid: Vec<f64>,
    },
    /// Parameter census of the configured model.
    Params {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Re-plot persisted evaluation points.
    Plot {
        /// JSON point files produced by eval/region/sweep.
        #[arg(required = true)]
        points: Vec<PathBuf>,
        /// Output PNG path.
        #[arg(long, default_value = "plot.png")]
        out: PathBuf,
        /// Plot the (PSNR1, PSNR2) region instead of PSNR vs SNR.
        #[arg(long)]
        region: bool,
    },
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "sf" => Ok(Scheme::Sf),
        "td" => Ok(Scheme::Td),
        "pa" => Ok(Scheme::Pa),
        "sic" => Ok(Scheme::Sic),
        other => Err(format!("unknown scheme {other:?} (expected sf|td|pa|sic)")),
    }
}

fn dataset_spec(dir: &PathBuf, train_count: usize, test_count: usize) -> DatasetSpec {
    DatasetSpec {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        height: 32,
        width: 32,
        train_count,
        test_count,
        source_path: dir.clone(),
        crop_or_resize: None,
    }
}

fn resolve_config(opts: &CommonOpts) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = match &opts.config {
        Some(path) => serde_json::from_slice(
            &std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => {
            let dir = opts
                .dataset
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--dataset or --config is required"))?;
            default_run_config(
                opts.scheme,
                dataset_spec(&dir, opts.train_count, opts.test_count),
                &opts.out,
            )
        }
    };
    cfg.scheme = opts.scheme;
    if let Some(dir) = &opts.dataset {
        cfg.dataset.source_path = dir.clone();
    }
    let ratio = match opts.scheme {
        Scheme::Sf => opts.alpha,
        Scheme::Td => opts.beta,
        Scheme::Pa => opts.gamma,
        Scheme::Sic => opts.zeta,
    };
    if let Some(r) = ratio {
        cfg.ratio = r;
    }
    if let Some(snr1) = opts.snr1 {
        cfg.eval.snr1_grid = vec![snr1];
    }
    if let Some(gap) = opts.gap {
        cfg.eval.gap = gap;
    }
    if let Some(se) = opts.sigma_e {
        cfg.eval.sigma_e = se;
    }
    if let Some(cbr) = opts.cbr {
        cfg.model.n = cbr_channel_uses(cfg.model.jscc.image_h, cfg.model.jscc.image_w, cbr)?;
    }
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = opts.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.out_dir = opts.out.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn print_points(points: &[PerformancePoint]) {
    for p in points {
        println!(
            "{} ratio={:.2} snr=({:.1},{:.1})dB sigma_e={:.2} -> psnr=({:.2},{:.2})dB uses={}",
            p.scheme, p.ratio, p.snr1_db, p.snr2_db, p.sigma_e, p.psnr1_db, p.psnr2_db, p.channel_uses
        );
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::init();
    match Cli::parse().cmd {
        Cmd::Ingest { opts } => {
            let (train_count, test_count) = (opts.train_count, opts.test_count);
            let dir = opts
                .dataset
                .ok_or_else(|| anyhow::anyhow!("--dataset is required"))?;
            let spec = dataset_spec(&dir, train_count, test_count);
            let has_data = dir.is_dir()
                && std::fs::read_dir(&dir)?.filter_map(|e| e.ok()).next().is_some();
            if !has_data {
                println!("synthesizing {} train + {} test images at {}", train_count, test_count, dir.display());
                synthesize_corpus(&dir, spec.height, spec.width, train_count, test_count, 7)?;
            }
            for split in [Split::Train, Split::Test] {
                let d = sfjscc::datahub::load_dataset(&spec, split)?;
                println!("{split:?}: {} images of {}x{}", d.count, spec.height, spec.width);
            }
        }
        Cmd::Train { opts } => {
            let cfg = resolve_config(&opts)?;
            let outcome = harness::train(&cfg)?;
            println!("checkpoint {}", outcome.checkpoint_id);
            for (i, l) in outcome.epoch_losses.iter().enumerate() {
                println!("epoch {i}: mean loss {l:.6}");
            }
            let plot = cfg.out_dir.join(format!("loss_{}.png", outcome.checkpoint_id));
            plots::loss_plot(&plot, &outcome.epoch_losses)?;
            println!("loss curve: {}", plot.display());
        }
        Cmd::Eval { opts } => {
            let cfg = resolve_config(&opts)?;
            let points = harness::evaluate(&cfg)?;
            print_points(&points);
            let plot = cfg.out_dir.join(format!("eval_{}_{:.2}.png", cfg.scheme, cfg.ratio));
            plots::sweep_plot(&plot, "PSNR vs SNR", &[(cfg.scheme.to_string(), points)])?;
            println!("plot: {}", plot.display());
        }
        Cmd::Region { opts, ratios } => {
            let mut cfg = resolve_config(&opts)?;
            if let Some(r) = ratios {
                cfg.eval.ratio_grid = r;
            }
            let snr1 = *cfg.eval.snr1_grid.first().unwrap();
            let region = harness::region_sweep(&cfg, snr1, snr1 - cfg.eval.gap)?;
            print_points(&region.points);
        }
        Cmd::Similarity { opts, count } => {
            let cfg = resolve_config(&opts)?;
            let features = harness::encode_features(&cfg, count)?;
            let dir = cfg.out_dir.join("similarity");
            std::fs::create_dir_all(&dir)?;
            for metric in [SimilarityMetric::Rv2, SimilarityMetric::AbsPearson] {
                let m = similarity_matrix(&features, metric)?;
                let name = match metric {
                    SimilarityMetric::Rv2 => "rv2",
                    SimilarityMetric::AbsPearson => "abs_pearson",
                };
                m.write_csv(&dir.join(format!("{name}.csv")))?;
                m.write_heatmap(&dir.join(format!("{name}.png")), 6)?;
                println!("{name}: median off-diagonal {:.4}", median(&m.off_diagonal()));
            }
        }
        Cmd::Baseline { opts } => {
            let mut cfg = resolve_config(&opts)?;
            cfg.scheme = Scheme::Sic;
            if let Some(z) = opts.zeta {
                cfg.ratio = z;
            }
            let points = harness::evaluate_sic(&cfg)?;
            print_points(&points);
        }
        Cmd::Sweep { opts, sigma_e_grid, gap_grid } => {
            let cfg = resolve_config(&opts)?;
            println!("sigma_e sweep:");
            print_points(&harness::sigma_e_sweep(&cfg, &sigma_e_grid)?);
            println!("gap sweep:");
            print_points(&harness::gap_sweep(&cfg, &gap_grid)?);
        }
        Cmd::Params { opts } => {
            let cfg = resolve_config(&opts)?;
            let report = count_scheme_parameters(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("channel uses per image pair: {}", audit_channel_uses(&cfg)?);
        }
        Cmd::Plot { points, out, region } => {
            let mut series = Vec::new();
            for path in &points {
                let pts: Vec<PerformancePoint> = serde_json::from_slice(
                    &std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
                )?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                series.push((name, pts));
            }
            if region {
                let regions: Vec<harness::RegionResult> = series
                    .iter()
                    .map(|(_, pts)| harness::RegionResult {
                        scheme: pts.first().map(|p| p.scheme).unwrap_or(Scheme::Sf),
                        snr1_db: pts.first().map(|p| p.snr1_db).unwrap_or(0.0),
                        snr2_db: pts.first().map(|p| p.snr2_db).unwrap_or(0.0),
                        points: pts.clone(),
                    })
                    .collect();
                plots::region_plot(&out, &regions)?;
            } else {
                plots::sweep_plot(&out, "PSNR vs SNR", &series)?;
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
