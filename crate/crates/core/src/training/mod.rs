//! Two-stage training: SSIM-loss pretraining of the generator, then
//! alternating discriminator updates (with weight clipping) and
//! frozen-discriminator adversarial generator updates.

mod adam;
mod log;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use log::{LogRecord, Stage, TrainingLog};

use crate::error::{Error, Result};
use crate::imaging::{DatasetManifest, FaceImage, Image};
use crate::metrics::{ssim_loss_grad, SsimParams, SsimWindow};
use crate::model::{Loss, LossGrad, Mode, Network, Role, Tensor};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationUnit {
    /// One iteration is a full pass over the shuffled pairs.
    Epoch,
    /// One iteration is a single mini-batch.
    BatchStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub clip_c: f64,
    pub seed: u64,
    /// Weight of the SSIM reconstruction term added to the adversarial
    /// generator loss in stage 2.
    pub adversarial_recon_weight: f64,
    pub iteration_unit: IterationUnit,
    /// SSIM settings of the reconstruction loss.
    pub loss_ssim: SsimParams,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            stage1_iterations: 50,
            stage2_iterations: 50,
            batch_size: 64,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            clip_c: 0.05,
            seed: 0,
            adversarial_recon_weight: 0.0,
            iteration_unit: IterationUnit::Epoch,
            loss_ssim: SsimParams {
                window: SsimWindow::Global,
                ..SsimParams::default()
            },
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage1_iterations == 0 || self.stage2_iterations == 0 {
            return bad("iteration counts must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(self.clip_c > 0.0) {
            return bad(format!("clip_c {} must be > 0", self.clip_c));
        }
        if !(self.adversarial_recon_weight >= 0.0) {
            return bad("adversarial_recon_weight must be >= 0".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        self.loss_ssim.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// A variant of unknown quality and its subject's anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<T> {
    pub subject_id: String,
    pub input_id: String,
    pub input: FaceImage<T>,
    pub target: FaceImage<T>,
}

/// `(subject_id, variant_id, anchor_id)` for every variant in the manifest.
pub fn pair_ids(manifest: &DatasetManifest) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    for s in &manifest.subjects {
        if s.variants.is_empty() {
            return Err(Error::NoVariants(s.subject_id.clone()));
        }
        for v in &s.variants {
            if *v == s.anchor {
                return Err(Error::Manifest(format!(
                    "subject {} lists its anchor as a variant",
                    s.subject_id
                )));
            }
            out.push((s.subject_id.clone(), v.clone(), s.anchor.clone()));
        }
    }
    Ok(out)
}

/// Loads one pair per variant; anchors are only ever targets.
pub fn make_training_pairs<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<TrainingPair<T>>> {
    let ids = pair_ids(manifest)?;
    let mut anchors = std::collections::HashMap::new();
    let mut pairs = Vec::with_capacity(ids.len());
    for (subject_id, input_id, anchor_id) in ids {
        let target = match anchors.get(&anchor_id) {
            Some(a) => FaceImage::clone(a),
            None => {
                let a = FaceImage::<T>::load(&manifest.resolve(&anchor_id))?;
                anchors.insert(anchor_id.clone(), a.clone());
                a
            }
        };
        let input = FaceImage::load(&manifest.resolve(&input_id))?;
        pairs.push(TrainingPair {
            subject_id,
            input_id,
            input,
            target,
        });
    }
    Ok(pairs)
}

/// Distinct anchors of a manifest in subject order.
pub fn load_anchors<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<FaceImage<T>>> {
    manifest
        .subjects
        .iter()
        .map(|s| FaceImage::load(&manifest.resolve(&s.anchor)))
        .collect()
}

/// Yields the index batches of one iteration. Pairs are reshuffled at every
/// epoch boundary; the last partial batch of an epoch is kept.
struct BatchPlan {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    unit: IterationUnit,
    rng: ChaCha8Rng,
}

impl BatchPlan {
    fn new(len: usize, batch: usize, unit: IterationUnit, seed: u64) -> Self {
        let mut plan = Self {
            order: (0..len).collect(),
            cursor: len,
            batch,
            unit,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        plan.reshuffle();
        plan
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch).min(self.order.len());
        let b = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        b
    }

    fn iteration(&mut self) -> Vec<Vec<usize>> {
        match self.unit {
            IterationUnit::BatchStep => vec![self.next_batch()],
            IterationUnit::Epoch => {
                if self.cursor != 0 {
                    self.reshuffle();
                }
                let mut out = Vec::new();
                while self.cursor < self.order.len() {
                    out.push(self.next_batch());
                }
                out
            }
        }
    }
}

fn check_finite(stage: &'static str, iteration: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            stage,
            iteration,
            value,
        })
    }
}

fn require_role<T: Scalar>(net: &Network<T>, role: Role) -> Result<()> {
    if net.role() == role {
        Ok(())
    } else {
        Err(Error::Config(format!("expected a {role:?} network")))
    }
}

fn gather<T: Scalar>(pairs: &[TrainingPair<T>], idx: &[usize]) -> Result<(Tensor<T>, Vec<Image<T>>)> {
    let inputs: Vec<&Image<T>> = idx.iter().map(|i| pairs[*i].input.image()).collect();
    let targets = idx.iter().map(|i| pairs[*i].target.image().clone()).collect();
    Ok((Tensor::from_images(&inputs)?, targets))
}

const STAGE1_STREAM: u64 = 0x5354_4731;
const STAGE2_STREAM: u64 = 0x5354_4732;

/// Pretrains the generator alone by minimizing `1 - SSIM(G(input), anchor)`.
pub fn train_stage1<T: Scalar>(
    mut g: Network<T>,
    pairs: &[TrainingPair<T>],
    cfg: &TrainingConfig,
) -> Result<(Network<T>, TrainingLog)> {
    cfg.validate()?;
    require_role(&g, Role::Generator)?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    let mut opt = Adam::new(cfg.adam());
    let mut plan = BatchPlan::new(pairs.len(), cfg.batch_size, cfg.iteration_unit, cfg.seed ^ STAGE1_STREAM);
    let mut log = TrainingLog::default();
    let start = Instant::now();
    for it in 0..cfg.stage1_iterations {
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in plan.iteration() {
            let (input, targets) = gather(pairs, &idx)?;
            let loss = Loss::SsimRecon {
                targets: &targets,
                params: cfg.loss_ssim,
            };
            let (value, grads, pass) = g.loss_backward(&input, Mode::Train, &loss)?;
            let value = value.to_f64_lossy();
            check_finite("stage1", it, value)?;
            opt.step(g.params_mut(), &grads)?;
            g.update_running_stats(&pass);
            total += value * idx.len() as f64;
            count += idx.len();
        }
        let mean = total / count as f64;
        log.push(it, Stage::Stage1, "ssim_loss", mean, start.elapsed().as_secs_f64());
    }
    if !g.params().all_finite() {
        return Err(Error::Divergence {
            stage: "stage1",
            iteration: cfg.stage1_iterations,
            value: f64::NAN,
        });
    }
    Ok((g, log))
}

/// One discriminator update on real anchors (label 1) and restorations
/// (label 0), followed by weight clipping. Returns the mean BCE.
pub fn discriminator_step<T: Scalar>(
    d: &mut Network<T>,
    opt: &mut Adam<T>,
    reals: &[&Image<T>],
    fakes: &[&Image<T>],
    clip_c: T,
) -> Result<T> {
    let mut batch: Vec<&Image<T>> = reals.to_vec();
    batch.extend_from_slice(fakes);
    let labels: Vec<T> = std::iter::repeat_n(T::one(), reals.len())
        .chain(std::iter::repeat_n(T::zero(), fakes.len()))
        .collect();
    let input = Tensor::from_images(&batch)?;
    let (loss, grads, pass) = d.loss_backward(&input, Mode::Train, &Loss::Bce(&labels))?;
    opt.step(d.params_mut(), &grads)?;
    d.update_running_stats(&pass);
    d.params_mut().clip_weights_in_place(clip_c);
    Ok(loss)
}

/// One generator update against a frozen discriminator: minimizes
/// `BCE(D(G(x)), 1) + recon_weight * (1 - SSIM(G(x), target))`. The
/// discriminator runs in eval mode and is only borrowed.
pub fn generator_adversarial_step<T: Scalar>(
    g: &mut Network<T>,
    d: &Network<T>,
    opt: &mut Adam<T>,
    input: &Tensor<T>,
    targets: &[Image<T>],
    recon_weight: T,
    ssim: &SsimParams,
) -> Result<T> {
    let n = input.n;
    let g_pass = g.forward(input, Mode::Train, true)?;
    let ones = vec![T::one(); n];
    let (adv, d_grads, _) = d.loss_backward(&g_pass.output, Mode::Eval, &Loss::Bce(&ones))?;
    let mut grad = d_grads.input.data;
    let mut total = adv;
    if recon_weight > T::zero() {
        let inv_n = T::one() / T::from_usize_lossy(n);
        let outputs = g_pass.output.images();
        let mut recon_grads = Vec::with_capacity(n);
        for (out, target) in outputs.iter().zip(targets) {
            let (l, gi) = ssim_loss_grad(out, target, ssim)?;
            total += recon_weight * l * inv_n;
            recon_grads.push(Image::new(out.height(), out.width(), out.channels(), gi)?);
        }
        let refs: Vec<&Image<T>> = recon_grads.iter().collect();
        let recon = Tensor::from_images(&refs)?;
        for (g, r) in grad.iter_mut().zip(recon.data) {
            *g += recon_weight * r * inv_n;
        }
    }
    let grads = g.backward(&g_pass, LossGrad::Output(grad))?;
    opt.step(g.params_mut(), &grads)?;
    g.update_running_stats(&g_pass);
    Ok(total)
}

/// Notifications emitted by [`train_stage2_observed`].
pub enum Stage2Event<'a, T> {
    DiscriminatorUpdated {
        iteration: usize,
        d: &'a Network<T>,
    },
    GeneratorUpdated {
        iteration: usize,
        g: &'a Network<T>,
        d: &'a Network<T>,
    },
}

/// Adversarial stage; see [`train_stage2_observed`].
pub fn train_stage2<T: Scalar>(
    g: Network<T>,
    d: Network<T>,
    pairs: &[TrainingPair<T>],
    anchors: &[FaceImage<T>],
    cfg: &TrainingConfig,
) -> Result<(Network<T>, Network<T>, TrainingLog)> {
    train_stage2_observed(g, d, pairs, anchors, cfg, |_| {})
}

/// Each iteration first trains D over the whole iteration's batches (clipping
/// after every update), then trains G over the same span with D frozen.
pub fn train_stage2_observed<T: Scalar>(
    mut g: Network<T>,
    mut d: Network<T>,
    pairs: &[TrainingPair<T>],
    anchors: &[FaceImage<T>],
    cfg: &TrainingConfig,
    mut observe: impl FnMut(Stage2Event<'_, T>),
) -> Result<(Network<T>, Network<T>, TrainingLog)> {
    cfg.validate()?;
    require_role(&g, Role::Generator)?;
    require_role(&d, Role::Discriminator)?;
    if pairs.is_empty() || anchors.is_empty() {
        return Err(Error::Config("stage 2 needs pairs and anchors".into()));
    }
    let clip = T::lit(cfg.clip_c);
    let recon_weight = T::lit(cfg.adversarial_recon_weight);
    let mut g_opt = Adam::new(cfg.adam());
    let mut d_opt = Adam::new(cfg.adam());
    let seed = cfg.seed ^ STAGE2_STREAM;
    let mut d_plan = BatchPlan::new(pairs.len(), cfg.batch_size, cfg.iteration_unit, seed);
    let mut g_plan = BatchPlan::new(pairs.len(), cfg.batch_size, cfg.iteration_unit, seed.rotate_left(17));
    let mut real_rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(31));
    let mut log = TrainingLog::default();
    let start = Instant::now();
    // The clipping bound holds from the first iteration on.
    d.params_mut().clip_weights_in_place(clip);

    for it in 0..cfg.stage2_iterations {
        let (mut d_total, mut d_count) = (0.0, 0usize);
        for idx in d_plan.iteration() {
            let (input, _) = gather(pairs, &idx)?;
            let fakes = g.forward(&input, Mode::Eval, false)?.output.images();
            let reals: Vec<&Image<T>> = (0..idx.len())
                .map(|_| anchors[real_rng.random_range(0..anchors.len())].image())
                .collect();
            let fake_refs: Vec<&Image<T>> = fakes.iter().collect();
            let loss = discriminator_step(&mut d, &mut d_opt, &reals, &fake_refs, clip)?;
            let loss = loss.to_f64_lossy();
            check_finite("stage2_discriminator", it, loss)?;
            d_total += loss * idx.len() as f64;
            d_count += idx.len();
            observe(Stage2Event::DiscriminatorUpdated { iteration: it, d: &d });
        }
        let (mut g_total, mut g_count) = (0.0, 0usize);
        for idx in g_plan.iteration() {
            let (input, targets) = gather(pairs, &idx)?;
            let loss = generator_adversarial_step(
                &mut g,
                &d,
                &mut g_opt,
                &input,
                &targets,
                recon_weight,
                &cfg.loss_ssim,
            )?;
            let loss = loss.to_f64_lossy();
            check_finite("stage2_generator", it, loss)?;
            g_total += loss * idx.len() as f64;
            g_count += idx.len();
            observe(Stage2Event::GeneratorUpdated {
                iteration: it,
                g: &g,
                d: &d,
            });
        }
        let t = start.elapsed().as_secs_f64();
        log.push(it, Stage::Stage2, "d_loss", d_total / d_count as f64, t);
        log.push(it, Stage::Stage2, "g_loss", g_total / g_count as f64, t);
    }
    Ok((g, d, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SubjectRecord;

    #[test]
    fn pair_ids_one_per_variant() {
        let m = DatasetManifest::new(
            ".",
            vec![SubjectRecord {
                subject_id: "s".into(),
                anchor: "a.png".into(),
                variants: vec!["1.png".into(), "2.png".into(), "3.png".into()],
            }],
        )
        .unwrap();
        let ids = pair_ids(&m).unwrap();
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|(_, v, a)| a == "a.png" && v != a));
    }

    #[test]
    fn subject_without_variants_is_named() {
        let m = DatasetManifest::new(
            ".",
            vec![SubjectRecord {
                subject_id: "lonely".into(),
                anchor: "a.png".into(),
                variants: vec![],
            }],
        )
        .unwrap();
        assert!(matches!(pair_ids(&m), Err(Error::NoVariants(s)) if s == "lonely"));
    }

    #[test]
    fn config_invariants() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig { stage1_iterations: 0, ..Default::default() },
            TrainingConfig { stage2_iterations: 0, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { clip_c: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn batch_plan_covers_each_epoch() {
        let mut plan = BatchPlan::new(10, 4, IterationUnit::Epoch, 3);
        for _ in 0..3 {
            let batches = plan.iteration();
            assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
        let mut steps = BatchPlan::new(10, 4, IterationUnit::BatchStep, 3);
        let sizes: Vec<usize> = (0..4).map(|_| steps.iteration()[0].len()).collect();
        assert_eq!(sizes, vec![4, 4, 2, 4]);
    }
}
