use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{l1, l1_grad, lsgan_terms, LossBreakdown};
use super::{lr_at, TrainConfig};
use crate::data::{Domain, Patch, UnpairedDataset};
use crate::error::{Error, Result};
use crate::gp::{
    bank_build, gp_condition, knn_select, pseudo_loss, pseudo_loss_grad, pseudo_loss_grad_query,
    FeatureBank, GpPosterior,
};
use crate::kernels::KernelSpec;
use crate::metrics::{psnr, ssim};
use crate::nets::checkpoint::{Checkpoint, Network};
use crate::nets::{AdamState, Discriminator, Generator, GeneratorArch};

/// The four networks of a CycleGAN and their optimizers.
#[derive(Debug, Clone)]
pub struct CycleGan {
    /// Weather to clean (the restoration network).
    pub fwd: Generator,
    /// Clean to weather.
    pub rev: Generator,
    /// Scores clean-domain images.
    pub disc_clean: Discriminator,
    /// Scores weather-domain images.
    pub disc_weather: Discriminator,
    opt_fwd: AdamState,
    opt_rev: AdamState,
    opt_dc: AdamState,
    opt_dw: AdamState,
}

impl CycleGan {
    pub fn new(input_len: usize, config: &TrainConfig) -> Result<Self> {
        let arch = GeneratorArch {
            input_len,
            hidden: config.gen_hidden.clone(),
            tap_s: 1,
            tap_z: 2,
            residual: config.residual,
        };
        let seed = config.seed.wrapping_mul(16);
        let fwd = Generator::new(arch.clone(), seed + 1)?;
        let rev = Generator::new(arch, seed + 2)?;
        let disc_clean = Discriminator::new(input_len, &config.disc_hidden, seed + 3)?;
        let disc_weather = Discriminator::new(input_len, &config.disc_hidden, seed + 4)?;
        Ok(CycleGan::from_networks(
            fwd,
            rev,
            disc_clean,
            disc_weather,
            config.lr,
        ))
    }

    pub fn from_networks(
        fwd: Generator,
        rev: Generator,
        disc_clean: Discriminator,
        disc_weather: Discriminator,
        lr: f64,
    ) -> Self {
        CycleGan {
            opt_fwd: AdamState::new(fwd.num_params(), lr),
            opt_rev: AdamState::new(rev.num_params(), lr),
            opt_dc: AdamState::new(disc_clean.mlp().params().len(), lr),
            opt_dw: AdamState::new(disc_weather.mlp().params().len(), lr),
            fwd,
            rev,
            disc_clean,
            disc_weather,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.opt_fwd.step_count()
    }

    pub fn set_lr(&mut self, lr: f64) {
        for opt in [
            &mut self.opt_fwd,
            &mut self.opt_rev,
            &mut self.opt_dc,
            &mut self.opt_dw,
        ] {
            opt.lr = lr;
        }
    }

    pub fn zero_grads(&mut self) {
        self.fwd.mlp_mut().zero_grads();
        self.rev.mlp_mut().zero_grads();
        self.disc_clean.mlp_mut().zero_grads();
        self.disc_weather.mlp_mut().zero_grads();
    }

    /// Concatenated parameters of all four networks.
    pub fn flat_params(&self) -> Vec<f64> {
        [
            self.fwd.mlp().params(),
            self.rev.mlp().params(),
            self.disc_clean.mlp().params(),
            self.disc_weather.mlp().params(),
        ]
        .concat()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step_count(),
            networks: vec![
                Network::Generator(self.fwd.clone()),
                Network::Generator(self.rev.clone()),
                Network::Discriminator(self.disc_clean.clone()),
                Network::Discriminator(self.disc_weather.clone()),
            ],
        }
    }

    fn apply_updates(&mut self, scale: f64) -> Result<()> {
        let pairs: [(&mut crate::nets::Mlp, &mut AdamState); 4] = [
            (self.fwd.mlp_mut(), &mut self.opt_fwd),
            (self.rev.mlp_mut(), &mut self.opt_rev),
            (self.disc_clean.mlp_mut(), &mut self.opt_dc),
            (self.disc_weather.mlp_mut(), &mut self.opt_dw),
        ];
        for (mlp, opt) in pairs {
            mlp.scale_grads(scale);
            let (params, grads) = mlp.params_and_grads_mut();
            opt.step(params, grads)?;
        }
        Ok(())
    }
}

/// Per-sample GP statistics collected during a step.
#[derive(Debug, Clone, Copy, Default)]
pub struct GpStats {
    pub variance_sum: f64,
    pub count: usize,
}

/// Builds `(bank_w, bank_c)`: weather taps from the forward generator and
/// clean taps from the reverse generator.
pub fn build_epoch_banks(
    data: &UnpairedDataset,
    model: &CycleGan,
    epoch: u64,
) -> Result<(FeatureBank, FeatureBank)> {
    let bank_w = bank_build(&data.weather, &model.fwd, Domain::Weather, epoch)?;
    let bank_c = bank_build(&data.clean, &model.rev, Domain::Clean, epoch)?;
    Ok((bank_w, bank_c))
}

/// Mean PSNR / SSIM of the clamped restoration over the paired test set.
pub fn evaluate(fwd: &Generator, weather: &[Patch], clean: &[Patch]) -> Result<(f64, f64)> {
    if weather.is_empty() || weather.len() != clean.len() {
        return Err(Error::EmptyDataset);
    }
    let (mut p, mut s) = (0.0, 0.0);
    for (w, c) in weather.iter().zip(clean) {
        let out = fwd.forward(&w.pixels)?;
        let restored = Patch::from_clamped(w.width, w.height, &out.y, Domain::Clean);
        p += psnr(&restored, c)?;
        s += ssim(&restored, c)?;
    }
    let n = weather.len() as f64;
    Ok((p / n, s / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub lr: f64,
    pub losses: LossBreakdown,
    /// Mean posterior variance over all GP queries in the epoch.
    pub mean_variance: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: &str =
    "epoch,lr,cyc_w,cyc_c,adv_fwd,adv_rev,identity,p_fwd,p_rev,total,mean_sigma2,psnr,ssim";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), self.lr.to_string()];
        cols.extend(self.losses.fields().iter().map(|v| v.to_string()));
        cols.push(
            self.mean_variance
                .map(|v| v.to_string())
                .unwrap_or_default(),
        );
        cols.push(self.psnr.to_string());
        cols.push(self.ssim.to_string());
        cols.join(",")
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: CycleGan,
    rng: ChaCha8Rng,
    epoch: u64,
    banks: Option<(FeatureBank, FeatureBank)>,
    /// Kernels used against `(bank_w, bank_c)`.
    kernels: (KernelSpec, KernelSpec),
}

impl Trainer {
    pub fn new(config: TrainConfig, input_len: usize) -> Result<Self> {
        config.validate()?;
        let model = CycleGan::new(input_len, &config)?;
        Ok(Trainer::with_model(config, model))
    }

    pub fn with_model(config: TrainConfig, model: CycleGan) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5E_ED0F_DA7A);
        Trainer {
            kernels: (config.kernel.clone(), config.kernel.clone()),
            config,
            model,
            rng,
            epoch: 0,
            banks: None,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn banks(&self) -> Option<&(FeatureBank, FeatureBank)> {
        self.banks.as_ref()
    }

    /// Installs `(bank_w, bank_c)` and derives the kernel used for each.
    pub fn set_banks(&mut self, banks: (FeatureBank, FeatureBank)) {
        let kernel_for = |bank: &FeatureBank| match bank.median_s_distance() {
            Some(d) if self.config.median_length_scale && d > 0.0 => {
                self.config.kernel.with_input_length_scale(d)
            }
            _ => self.config.kernel.clone(),
        };
        self.kernels = (kernel_for(&banks.0), kernel_for(&banks.1));
        self.banks = Some(banks);
    }

    /// Kernels paired with `(bank_w, bank_c)`.
    pub fn kernels(&self) -> &(KernelSpec, KernelSpec) {
        &self.kernels
    }

    fn posterior(
        &self,
        kernel: &KernelSpec,
        bank: &FeatureBank,
        s: &[f64],
        z: &[f64],
    ) -> Result<GpPosterior> {
        let ids = knn_select(bank, z, self.config.n_neighbors)?;
        gp_condition(kernel, bank, &ids, s)
    }

    /// One optimizer step on a batch of unpaired samples. Generator and
    /// discriminator gradients are averaged over the batch.
    pub fn train_step(&mut self, batch: &[(&Patch, &Patch)]) -> Result<(LossBreakdown, GpStats)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let use_gp = self.config.dgp_enabled;
        if use_gp && self.banks.is_none() {
            return Err(Error::EmptyBank);
        }
        let lambda = self.config.effective_lambda();
        self.model.zero_grads();
        let mut total = LossBreakdown::default();
        let mut stats = GpStats::default();
        for &(iw, ic) in batch {
            let (losses, s) = self.sample_gradients(&iw.pixels, &ic.pixels, use_gp, lambda)?;
            total.accumulate(&losses);
            stats.variance_sum += s.variance_sum;
            stats.count += s.count;
        }
        let scale = 1.0 / batch.len() as f64;
        self.model.apply_updates(scale)?;
        let mut mean = total.scaled(scale);
        mean.assemble(lambda);
        Ok((mean, stats))
    }

    /// Posteriors `(clean-bank query, weather-bank query)` for one sample
    /// pair under the current weights and banks.
    pub fn sample_posteriors(&self, iw: &[f64], ic: &[f64]) -> Result<(GpPosterior, GpPosterior)> {
        let (bank_w, bank_c) = self.banks.as_ref().ok_or(Error::EmptyBank)?;
        let m = &self.model;
        let rc = m.rev.forward(&m.fwd.forward(iw)?.y)?;
        let fc = m.fwd.forward(&m.rev.forward(ic)?.y)?;
        let (kernel_w, kernel_c) = &self.kernels;
        Ok((
            self.posterior(kernel_c, bank_c, &rc.s, &rc.z)?,
            self.posterior(kernel_w, bank_w, &fc.s, &fc.z)?,
        ))
    }

    /// Forward chains, losses and accumulated gradients for one sample pair.
    pub(crate) fn sample_gradients(
        &mut self,
        iw: &[f64],
        ic: &[f64],
        use_gp: bool,
        lambda: f64,
    ) -> Result<(LossBreakdown, GpStats)> {
        let m = &self.model;
        // I_w -> Ĩ_c -> Î_w
        let fw = m.fwd.forward(iw)?;
        let rc = m.rev.forward(&fw.y)?;
        // I_c -> Ĩ_w -> Î_c
        let rw = m.rev.forward(ic)?;
        let fc = m.fwd.forward(&rw.y)?;
        let id_w = m.rev.forward(iw)?;
        let id_c = m.fwd.forward(ic)?;
        let dc_fake = m.disc_clean.forward(&fw.y)?;
        let dw_fake = m.disc_weather.forward(&rw.y)?;
        let dc_real = m.disc_clean.forward(ic)?;
        let dw_real = m.disc_weather.forward(iw)?;

        let (adv_fwd, _) = lsgan_terms(dc_real.score, dc_fake.score);
        let (adv_rev, _) = lsgan_terms(dw_real.score, dw_fake.score);
        let mut losses = LossBreakdown {
            cyc_w: l1(&rc.y, iw),
            cyc_c: l1(&fc.y, ic),
            adv_fwd,
            adv_rev,
            identity: l1(&id_w.y, iw) + l1(&id_c.y, ic),
            ..LossBreakdown::default()
        };

        let mut stats = GpStats::default();
        let (mut gz_c, mut gs_c, mut gz_w, mut gs_w) = (None, None, None, None);
        if use_gp {
            let (bank_w, bank_c) = self.banks.as_ref().expect("checked by caller");
            let (kernel_w, kernel_c) = &self.kernels;
            let post_c = self.posterior(kernel_c, bank_c, &rc.s, &rc.z)?;
            let post_w = self.posterior(kernel_w, bank_w, &fc.s, &fc.z)?;
            losses.p_fwd = pseudo_loss(&post_c, &rc.z)?;
            losses.p_rev = pseudo_loss(&post_w, &fc.z)?;
            stats.variance_sum = post_c.variance + post_w.variance;
            stats.count = 2;
            if lambda != 0.0 {
                let scale = |g: Vec<f64>| g.into_iter().map(|v| lambda * v).collect::<Vec<_>>();
                gz_c = Some(scale(pseudo_loss_grad(&post_c, &rc.z)?));
                gz_w = Some(scale(pseudo_loss_grad(&post_w, &fc.z)?));
                if self.config.grad_through_kernel {
                    gs_c = Some(scale(pseudo_loss_grad_query(
                        kernel_c,
                        bank_c,
                        &post_c.neighbor_ids,
                        &rc.s,
                        &rc.z,
                    )?));
                    gs_w = Some(scale(pseudo_loss_grad_query(
                        kernel_w,
                        bank_w,
                        &post_w.neighbor_ids,
                        &fc.s,
                        &fc.z,
                    )?));
                }
            }
        }
        losses.assemble(lambda);

        let m = &mut self.model;
        // Forward cycle: gradients reach F_{W→C} through Ĩ_c.
        let mut g_tilde_c = m.rev.backward(
            &rc.cache,
            &l1_grad(&rc.y, iw),
            gs_c.as_deref(),
            gz_c.as_deref(),
        )?;
        let g_adv = m
            .disc_clean
            .input_grad(&dc_fake.cache, 2.0 * (dc_fake.score - 1.0))?;
        g_tilde_c.iter_mut().zip(&g_adv).for_each(|(a, b)| *a += b);
        m.fwd.backward(&fw.cache, &g_tilde_c, None, None)?;

        // Reverse cycle.
        let mut g_tilde_w = m.fwd.backward(
            &fc.cache,
            &l1_grad(&fc.y, ic),
            gs_w.as_deref(),
            gz_w.as_deref(),
        )?;
        let g_adv = m
            .disc_weather
            .input_grad(&dw_fake.cache, 2.0 * (dw_fake.score - 1.0))?;
        g_tilde_w.iter_mut().zip(&g_adv).for_each(|(a, b)| *a += b);
        m.rev.backward(&rw.cache, &g_tilde_w, None, None)?;

        m.rev
            .backward(&id_w.cache, &l1_grad(&id_w.y, iw), None, None)?;
        m.fwd
            .backward(&id_c.cache, &l1_grad(&id_c.y, ic), None, None)?;

        // Discriminators on their own objective; fakes are treated as constants.
        m.disc_clean.backward(&dc_real.cache, dc_real.score - 1.0)?;
        m.disc_clean.backward(&dc_fake.cache, dc_fake.score)?;
        m.disc_weather
            .backward(&dw_real.cache, dw_real.score - 1.0)?;
        m.disc_weather.backward(&dw_fake.cache, dw_fake.score)?;

        Ok((losses, stats))
    }

    /// One pass over the unpaired training sets followed by evaluation.
    pub fn run_epoch(&mut self, data: &UnpairedDataset) -> Result<EpochRecord> {
        if data.weather.is_empty() || data.clean.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let lr = lr_at(self.epoch, &self.config);
        self.model.set_lr(lr);
        if self.config.dgp_enabled {
            let banks = build_epoch_banks(data, &self.model, self.epoch)?;
            self.set_banks(banks);
        }
        let mut order_w: Vec<usize> = (0..data.weather.len()).collect();
        let mut order_c: Vec<usize> = (0..data.clean.len()).collect();
        order_w.shuffle(&mut self.rng);
        order_c.shuffle(&mut self.rng);
        let pairs: Vec<(&Patch, &Patch)> = order_w
            .iter()
            .zip(&order_c)
            .map(|(&w, &c)| (&data.weather[w], &data.clean[c]))
            .collect();

        let mut sum = LossBreakdown::default();
        let mut steps = 0usize;
        let mut var = GpStats::default();
        for batch in pairs.chunks(self.config.batch_size) {
            let (losses, stats) = self.train_step(batch)?;
            sum.accumulate(&losses);
            var.variance_sum += stats.variance_sum;
            var.count += stats.count;
            steps += 1;
        }
        let mut mean = sum.scaled(1.0 / steps as f64);
        mean.assemble(self.config.effective_lambda());
        let (psnr, ssim) = evaluate(&self.model.fwd, &data.test_weather, &data.test_clean)?;
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            losses: mean,
            mean_variance: (var.count > 0).then(|| var.variance_sum / var.count as f64),
            psnr,
            ssim,
        };
        self.epoch += 1;
        Ok(record)
    }
}
