//! Run orchestration: configs, training, evaluation sweeps, and reports.
//!
//! A [`RunConfig`] fully determines a run; its hash keys the checkpoint
//! cache, so retraining an identical config resumes instead of recomputing.
//! All randomness flows through the seeded streams in [`crate::rng`], which
//! makes training resumable bit-for-bit and evaluation reproducible.

pub mod checkpoint;
pub mod optim;
pub mod plots;

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::baselines::{sic_config, td_schedule, CodecAdapter};
use crate::channel::{perturb_csi, sample_training_csi, ChannelState};
use crate::datahub::{load_dataset, plan_disjoint_pairs, DatasetSpec, LoadedDataset, Split};
use crate::error::{Error, Result};
use crate::jscc::JsccConfig;
use crate::nn::is_csi_param;
use crate::objective::{self, LossReport};
use crate::pipeline::{PaPipeline, SfModel, SfModelConfig, SingleUserConfig, SingleUserModel, TdPipeline};
use crate::rng::{stream_rng, Stream};
use checkpoint::{config_hash, default_store};
use optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sf,
    Td,
    Pa,
    Sic,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Sf => "sf",
            Scheme::Td => "td",
            Scheme::Pa => "pa",
            Scheme::Sic => "sic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub snr1_grid: Vec<f64>,
    pub gap: f64,
    pub sigma_e: f64,
    pub batch_size: usize,
    /// Ratio grid for region sweeps.
    pub ratio_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub dataset: DatasetSpec,
    /// Backbone and fusion layout; `alpha` inside is overridden by `ratio`
    /// when the scheme is SF.
    pub model: SfModelConfig,
    /// The scheme's resource ratio: alpha (SF), beta (TD), gamma (PA) or
    /// zeta (SIC).
    pub ratio: f64,
    /// Baseline loss weight on the better user.
    pub lambda: f64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

/// The slice of the config that determines trained weights; hashed to key
/// the checkpoint cache. Output paths, eval grids, and the epoch budget are
/// excluded — extending `epochs` resumes the same checkpoint.
#[derive(Serialize)]
struct WeightsKey<'a> {
    scheme: Scheme,
    dataset: &'a DatasetSpec,
    model: &'a SfModelConfig,
    ratio: f64,
    lambda: f64,
    batch_size: usize,
    lr: f64,
    seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::config(format!("ratio must be in [0,1], got {}", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must be in [0,1], got {}", self.lambda)));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if self.train.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.eval.snr1_grid.is_empty() {
            return Err(Error::config("eval SNR grid must be nonempty"));
        }
        match self.scheme {
            Scheme::Sf => self.sf_config()?.validate(),
            Scheme::Td => {
                let td = td_schedule(self.model.n, self.ratio)?;
                self.single_user_config(td.n1)?.validate()?;
                self.single_user_config(td.n2)?.validate()
            }
            Scheme::Pa => self.single_user_config(self.model.n)?.validate(),
            Scheme::Sic => {
                if !(0.0 < self.ratio && self.ratio < 1.0) {
                    return Err(Error::config("zeta must be in (0,1)"));
                }
                Ok(())
            }
        }
    }

    pub fn config_hash(&self) -> Result<String> {
        config_hash(&WeightsKey {
            scheme: self.scheme,
            dataset: &self.dataset,
            model: &self.model,
            ratio: self.ratio,
            lambda: self.lambda,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            seed: self.train.seed,
        })
    }

    fn sf_config(&self) -> Result<SfModelConfig> {
        let mut cfg = self.model.clone();
        cfg.alpha = self.ratio;
        Ok(cfg)
    }

    fn single_user_config(&self, n: usize) -> Result<SingleUserConfig> {
        let mut jscc = self.model.jscc.clone();
        jscc.out_channels = self.model.omega;
        Ok(SingleUserConfig { jscc, n_sf: self.model.n_sf, n_df: self.model.n_df, n })
    }

    /// Persist the resolved config verbatim next to the run outputs.
    pub fn persist(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(format!("config_{}.json", self.config_hash()?));
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

/// One entry of a performance region or SNR sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerformancePoint {
    pub scheme: Scheme,
    pub ratio: f64,
    pub snr1_db: f64,
    pub snr2_db: f64,
    pub psnr1_db: f64,
    pub psnr2_db: f64,
    pub sigma_e: f64,
    pub seed: u64,
    pub checkpoint_id: String,
    /// Complex channel uses the scheme consumed per image pair (budget audit).
    pub channel_uses: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionResult {
    pub scheme: Scheme,
    pub snr1_db: f64,
    pub snr2_db: f64,
    pub points: Vec<PerformancePoint>,
}

/// A trained (or resumed) model's identity and loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_id: String,
    pub epoch_losses: Vec<f64>,
    pub log_path: PathBuf,
}

enum Net {
    Sf(SfModel),
    Td(TdPipeline),
    Pa(PaPipeline),
}

impl Net {
    fn forward(
        &self,
        s1: &Tensor,
        s2: &Tensor,
        est: &ChannelState,
        truth: &ChannelState,
        seed: u64,
        step: u64,
    ) -> Result<(Tensor, Tensor)> {
        match self {
            Net::Sf(m) => {
                let out = m.forward(s1, s2, est, truth, seed, step)?;
                Ok((out.s1_hat, out.s2_hat))
            }
            Net::Td(p) => p.forward(s1, s2, est, truth, seed, step),
            Net::Pa(p) => p.forward(s1, s2, est, truth, seed, step),
        }
    }
}

fn build_net(cfg: &RunConfig, vb: VarBuilder) -> Result<Net> {
    match cfg.scheme {
        Scheme::Sf => Ok(Net::Sf(SfModel::new(&cfg.sf_config()?, vb)?)),
        Scheme::Td => {
            let td = td_schedule(cfg.model.n, cfg.ratio)?;
            Ok(Net::Td(TdPipeline {
                user1: SingleUserModel::new(&cfg.single_user_config(td.n1)?, vb.pp("u1"))?,
                user2: SingleUserModel::new(&cfg.single_user_config(td.n2)?, vb.pp("u2"))?,
            }))
        }
        Scheme::Pa => Ok(Net::Pa(PaPipeline {
            user1: SingleUserModel::new(&cfg.single_user_config(cfg.model.n)?, vb.pp("u1"))?,
            user2: SingleUserModel::new(&cfg.single_user_config(cfg.model.n)?, vb.pp("u2"))?,
            gamma: cfg.ratio,
        })),
        Scheme::Sic => Err(Error::config("sic is rate math plus a codec; nothing to train")),
    }
}

/// Complex channel uses one image pair consumes under this config.
pub fn audit_channel_uses(cfg: &RunConfig) -> Result<usize> {
    Ok(match cfg.scheme {
        Scheme::Sf | Scheme::Pa | Scheme::Sic => cfg.model.n,
        Scheme::Td => {
            let td = td_schedule(cfg.model.n, cfg.ratio)?;
            td.n1 + td.n2
        }
    })
}

fn scheme_loss(cfg: &RunConfig, l1: &Tensor, l2: &Tensor) -> Result<Tensor> {
    match cfg.scheme {
        Scheme::Sf => objective::l3_tensor(l1, l2),
        Scheme::Td | Scheme::Pa => {
            objective::combined_baseline_loss_tensor(l1, l2, cfg.lambda)
        }
        Scheme::Sic => Err(Error::config("sic has no training loss")),
    }
}

/// Train (or resume) the configured scheme to its epoch budget.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.persist()?;
    let hash = cfg.config_hash()?;
    let store = default_store(&cfg.out_dir);
    let dev = Device::Cpu;

    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &dev);
    // Parameter init must be deterministic per seed: candle's default init
    // draws from a global RNG, so seed the weights explicitly afterwards.
    let net = build_net(cfg, vb)?;
    seed_weights(&varmap, cfg.train.seed)?;
    let mut adam = Adam::new(&varmap, cfg.train.lr)?;

    let (mut start_epoch, mut step, mut epoch_losses) = (0u64, 0u64, Vec::new());
    if store.exists(&hash) {
        let meta = store.load_weights(&hash, &mut varmap)?;
        store.load_optim(&hash, &mut adam, &dev)?;
        start_epoch = meta.epoch;
        step = meta.step;
        epoch_losses = meta.epoch_losses;
    }

    let log_dir = cfg.out_dir.join("logs");
    std::fs::create_dir_all(&log_dir)?;
    let log_path = log_dir.join(format!("train_{hash}.csv"));
    let fresh_log = !log_path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    let mut log = csv::WriterBuilder::new().has_headers(fresh_log).from_writer(file);

    if start_epoch >= cfg.train.epochs {
        return Ok(TrainOutcome { checkpoint_id: hash, epoch_losses, log_path });
    }

    let data = load_dataset(&cfg.dataset, Split::Train)?;
    for epoch in start_epoch..cfg.train.epochs {
        let plan = plan_disjoint_pairs(data.count, cfg.train.batch_size, cfg.train.seed, epoch)?;
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for (ids1, ids2) in &plan {
            let b1 = data.batch(ids1, &dev)?;
            let b2 = data.batch(ids2, &dev)?;
            let truth = sample_training_csi(&mut stream_rng(cfg.train.seed, Stream::Csi, step));
            let est = truth; // exact CSI during training
            let (s1_hat, s2_hat) = net.forward(&b1.data, &b2.data, &est, &truth, cfg.train.seed, step)?;
            let l1t = objective::mse_tensor(&b1.data, &s1_hat)?;
            let l2t = objective::mse_tensor(&b2.data, &s2_hat)?;
            let loss = scheme_loss(cfg, &l1t, &l2t)?;
            let loss_val = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !loss_val.is_finite() {
                return Err(Error::Numeric {
                    step: step as usize,
                    reason: format!("non-finite loss {loss_val}"),
                });
            }
            let grads = loss.backward()?;
            adam.step(&grads)?;

            let l1 = l1t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let l2 = l2t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let (w1, w2) = objective::l3_gradient_weights(l1, l2);
            log.serialize(LossReport {
                step: step as usize,
                l1,
                l2,
                l3: objective::l3(l1, l2),
                psnr1: objective::psnr(l1),
                psnr2: objective::psnr(l2),
                w1,
                w2,
                snr1_db: truth.snr1_db,
                snr2_db: truth.snr2_db,
            })?;
            epoch_sum += loss_val;
            epoch_batches += 1;
            step += 1;
        }
        log.flush()?;
        epoch_losses.push(epoch_sum / epoch_batches.max(1) as f64);
        store.save(&hash, &varmap, &adam, epoch + 1, step, &epoch_losses)?;
    }
    Ok(TrainOutcome { checkpoint_id: hash, epoch_losses, log_path })
}

/// Re-draw every weight from the run seed so init does not depend on global
/// process state. Shapes keep candle's kaiming-style fan-in scaling.
fn seed_weights(varmap: &VarMap, seed: u64) -> Result<()> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<String> = data.keys().cloned().collect();
    names.sort();
    for (i, name) in names.iter().enumerate() {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
        if name.contains("norm") {
            continue; // norm affines keep their (1, 0) init
        }
        if name.ends_with("bias") {
            var.set(&Tensor::zeros(var.shape(), var.dtype(), var.device())?)?;
            continue;
        }
        let std = (2.0 / fan_in as f64).sqrt();
        let mut rng = stream_rng(seed, Stream::Init, i as u64);
        let vals: Vec<f32> = (0..var.elem_count())
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (z * std) as f32
            })
            .collect();
        var.set(&Tensor::from_vec(vals, dims, var.device())?)?;
    }
    Ok(())
}

/// Deterministic test-split pairing: first half of the ids against the
/// second half, in order.
fn eval_pairs(count: usize, batch: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let half = count / 2;
    (0..half)
        .step_by(batch)
        .map(|s| {
            let e = (s + batch).min(half);
            ((s..e).collect(), (s + half..e + half).collect())
        })
        .collect()
}

fn mean_psnr_over_split(
    net: &Net,
    data: &LoadedDataset,
    cfg: &RunConfig,
    truth: &ChannelState,
    est: &ChannelState,
    point_idx: u64,
) -> Result<(f64, f64)> {
    let dev = Device::Cpu;
    let (mut sum1, mut sum2, mut count) = (0.0, 0.0, 0usize);
    for (b, (ids1, ids2)) in eval_pairs(data.count, cfg.eval.batch_size).iter().enumerate() {
        let b1 = data.batch(ids1, &dev)?;
        let b2 = data.batch(ids2, &dev)?;
        let step = point_idx * 1_000_000 + b as u64;
        let (s1_hat, s2_hat) = net.forward(&b1.data, &b2.data, est, truth, cfg.train.seed, step)?;
        let n = ids1.len();
        sum1 += objective::mse(&b1.data, &s1_hat)? * n as f64;
        sum2 += objective::mse(&b2.data, &s2_hat)? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::config("test split too small for one eval pair"));
    }
    Ok((
        objective::psnr(sum1 / count as f64),
        objective::psnr(sum2 / count as f64),
    ))
}

/// Evaluate a trained checkpoint over the config's SNR grid at its σ_e and
/// gap. Points are persisted as CSV and JSON under `out_dir/eval/`.
pub fn evaluate(cfg: &RunConfig) -> Result<Vec<PerformancePoint>> {
    cfg.validate()?;
    if cfg.scheme == Scheme::Sic {
        return evaluate_sic(cfg);
    }
    let hash = cfg.config_hash()?;
    let store = default_store(&cfg.out_dir);
    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
    let net = build_net(cfg, vb)?;
    store.load_weights(&hash, &mut varmap)?;

    let data = load_dataset(&cfg.dataset, Split::Test)?;
    let uses = audit_channel_uses(cfg)?;
    let mut points = Vec::new();
    for (k, &snr1) in cfg.eval.snr1_grid.iter().enumerate() {
        let truth = ChannelState::new(snr1, snr1 - cfg.eval.gap);
        let est = perturb_csi(
            &truth,
            cfg.eval.sigma_e,
            &mut stream_rng(cfg.train.seed, Stream::CsiPerturb, k as u64),
        );
        let (psnr1, psnr2) = mean_psnr_over_split(&net, &data, cfg, &truth, &est, k as u64)?;
        if !psnr1.is_finite() || !psnr2.is_finite() {
            return Err(Error::Numeric { step: k, reason: "non-finite PSNR".into() });
        }
        points.push(PerformancePoint {
            scheme: cfg.scheme,
            ratio: cfg.ratio,
            snr1_db: truth.snr1_db,
            snr2_db: truth.snr2_db,
            psnr1_db: psnr1,
            psnr2_db: psnr2,
            sigma_e: cfg.eval.sigma_e,
            seed: cfg.train.seed,
            checkpoint_id: hash.clone(),
            channel_uses: uses,
        });
    }
    persist_points(cfg, &points, "eval")?;
    Ok(points)
}

/// The SIC leg: capacity bit budgets fed to the external codec. Requires the
/// codec adapter; the SF pipeline never depends on it.
pub fn evaluate_sic(cfg: &RunConfig) -> Result<Vec<PerformancePoint>> {
    let adapter = CodecAdapter::from_env()?;
    let data = load_dataset(&cfg.dataset, Split::Test)?;
    // Codec calls are slow subprocesses; a small deterministic sample of the
    // split keeps eval tractable.
    let sample: Vec<usize> = (0..data.count.min(8)).collect();
    let mut points = Vec::new();
    for (k, &snr1) in cfg.eval.snr1_grid.iter().enumerate() {
        let snr2 = snr1 - cfg.eval.gap;
        let sic = sic_config(cfg.ratio, snr1, snr2, cfg.model.n)?;
        let mut psnr = [0.0f64; 2];
        for (u, budget) in [(0usize, sic.b1), (1usize, sic.b2)] {
            let mut acc = 0.0;
            for &idx in &sample {
                let img = rgb_image(&data, idx, &cfg.dataset)?;
                acc += crate::baselines::codec_baseline(&adapter, &img, budget)?.psnr_db;
            }
            psnr[u] = acc / sample.len() as f64;
        }
        points.push(PerformancePoint {
            scheme: Scheme::Sic,
            ratio: cfg.ratio,
            snr1_db: snr1,
            snr2_db: snr2,
            psnr1_db: psnr[0],
            psnr2_db: psnr[1],
            sigma_e: cfg.eval.sigma_e,
            seed: cfg.train.seed,
            checkpoint_id: format!("sic_r1_{:.3}_r2_{:.3}", sic.r1, sic.r2),
            channel_uses: cfg.model.n,
        });
        let _ = k;
    }
    persist_points(cfg, &points, "eval")?;
    Ok(points)
}

fn rgb_image(data: &LoadedDataset, idx: usize, spec: &DatasetSpec) -> Result<image::RgbImage> {
    let (h, w) = (spec.height as u32, spec.width as u32);
    let bytes = data.image_bytes(idx);
    let mut img = image::RgbImage::new(w, h);
    let plane = (h * w) as usize;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            img.put_pixel(x, y, image::Rgb([bytes[i], bytes[plane + i], bytes[2 * plane + i]]));
        }
    }
    Ok(img)
}

fn persist_points(cfg: &RunConfig, points: &[PerformancePoint], sub: &str) -> Result<()> {
    let dir = cfg.out_dir.join(sub);
    std::fs::create_dir_all(&dir)?;
    let stem = format!("{}_{:.2}", cfg.scheme, cfg.ratio);
    let mut wtr = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for p in points {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_vec_pretty(points)?,
    )?;
    Ok(())
}

/// Sweep the scheme's ratio at a fixed SNR pair, training each missing
/// checkpoint, and plot the resulting region.
pub fn region_sweep(cfg: &RunConfig, snr1_db: f64, snr2_db: f64) -> Result<RegionResult> {
    let mut ratios = cfg.eval.ratio_grid.clone();
    if ratios.len() < 2 && cfg.scheme != Scheme::Sic {
        return Err(Error::config("region sweep needs >= 2 ratios"));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut points = Vec::new();
    for ratio in ratios {
        let mut sub = cfg.clone();
        sub.ratio = ratio;
        sub.eval.snr1_grid = vec![snr1_db];
        sub.eval.gap = snr1_db - snr2_db;
        if sub.scheme != Scheme::Sic {
            train(&sub)?;
        }
        points.extend(evaluate(&sub)?);
    }
    let region = RegionResult { scheme: cfg.scheme, snr1_db, snr2_db, points };
    let dir = cfg.out_dir.join("region");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join(format!("{}.json", cfg.scheme)),
        serde_json::to_vec_pretty(&region)?,
    )?;
    plots::region_plot(&dir.join(format!("{}.png", cfg.scheme)), std::slice::from_ref(&region))?;
    Ok(region)
}

/// Evaluate the checkpoint at each CSI-estimation-error level; the grid is
/// evaluated at the config's existing SNR grid and gap.
pub fn sigma_e_sweep(cfg: &RunConfig, sigma_e_grid: &[f64]) -> Result<Vec<PerformancePoint>> {
    let mut points = Vec::new();
    for &sigma_e in sigma_e_grid {
        let mut sub = cfg.clone();
        sub.eval.sigma_e = sigma_e;
        points.extend(evaluate(&sub)?);
    }
    persist_points(cfg, &points, "sweep_sigma_e")?;
    Ok(points)
}

/// Evaluate the checkpoint at each SNR gap, holding snr1 at the first grid
/// entry.
pub fn gap_sweep(cfg: &RunConfig, gaps: &[f64]) -> Result<Vec<PerformancePoint>> {
    let snr1 = cfg.eval.snr1_grid[0];
    let mut points = Vec::new();
    for &gap in gaps {
        let mut sub = cfg.clone();
        sub.eval.snr1_grid = vec![snr1];
        sub.eval.gap = gap;
        points.extend(evaluate(&sub)?);
    }
    persist_points(cfg, &points, "sweep_gap")?;
    Ok(points)
}

/// Encoder-1 feature matrices for the first `count` test images, one
/// (tokens x channels) matrix per image, from the trained SF checkpoint.
pub fn encode_features(cfg: &RunConfig, count: usize) -> Result<Vec<crate::similarity::FeatureMatrix>> {
    if cfg.scheme != Scheme::Sf {
        return Err(Error::config("feature extraction needs the sf scheme"));
    }
    let hash = cfg.config_hash()?;
    let store = default_store(&cfg.out_dir);
    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
    let model = SfModel::new(&cfg.sf_config()?, vb)?;
    store.load_weights(&hash, &mut varmap)?;

    let data = load_dataset(&cfg.dataset, Split::Test)?;
    let n = count.min(data.count);
    if n < 2 {
        return Err(Error::config("need at least 2 images for similarity"));
    }
    let est = ChannelState::new(13.0, 8.0);
    let mut features = Vec::with_capacity(n);
    for idx in 0..n {
        let batch = data.batch(&[idx], &Device::Cpu)?;
        let f = model.features_user1(&batch.data, &est)?;
        let (_b, c, h, w) = f.dims4()?;
        // (1,C,H,W) -> tokens x channels
        let mat = f
            .reshape((c, h * w))?
            .t()?
            .contiguous()?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        features.push(crate::similarity::FeatureMatrix::new(h * w, c, mat)?);
    }
    Ok(features)
}

/// Parameter census of a built model.
#[derive(Debug, Clone, Serialize)]
pub struct ParamReport {
    pub total: usize,
    pub csi: usize,
    pub csi_share: f64,
}

pub fn count_parameters(varmap: &VarMap) -> ParamReport {
    let data = varmap.data().lock().unwrap();
    let mut total = 0usize;
    let mut csi = 0usize;
    for (name, var) in data.iter() {
        let n = var.elem_count();
        total += n;
        if is_csi_param(name) {
            csi += n;
        }
    }
    ParamReport { total, csi, csi_share: csi as f64 / total.max(1) as f64 }
}

/// Build the configured scheme just to census its parameters.
pub fn count_scheme_parameters(cfg: &RunConfig) -> Result<ParamReport> {
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
    build_net(cfg, vb)?;
    Ok(count_parameters(&varmap))
}

/// Desk-scale defaults: 32x32 sources at CBR 0.25 over n = 768 channel uses.
pub fn default_run_config(scheme: Scheme, dataset: DatasetSpec, out_dir: &Path) -> RunConfig {
    RunConfig {
        scheme,
        dataset,
        model: SfModelConfig {
            jscc: JsccConfig {
                image_h: 32,
                image_w: 32,
                patch: 2,
                embed_dim: 32,
                num_heads: 4,
                window: 4,
                mlp_ratio: 2.0,
                shift_alternate: true,
                enc_depths: vec![4],
                dec_depths: vec![4],
                csi_sin_dim: 32,
                csi_hidden: 16,
                csi_dim: 16,
                out_channels: 0,
            },
            alpha: 0.5,
            omega: 16,
            n_sf: 2,
            n_df: 2,
            n: 768,
        },
        ratio: 0.5,
        lambda: 0.3,
        train: TrainConfig { epochs: 30, batch_size: 64, lr: 1e-4, seed: 7 },
        eval: EvalConfig {
            snr1_grid: vec![5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0, 19.0],
            gap: 5.0,
            sigma_e: 0.0,
            batch_size: 64,
            ratio_grid: vec![0.3, 0.5, 0.7],
        },
        out_dir: out_dir.to_path_buf(),
    }
}
