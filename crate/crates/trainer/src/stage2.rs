//! Stage II: mean-teacher training with Dice+CE, consistency and the organ-aware
//! local contrastive term over the teacher memory bank.

use losses::{
    consistency_loss, dice_ce_loss, lcl_loss, mask_centers, stage2_total, LossWeights, MemoryBank, Progress,
    Stage2Terms,
};
use nets::{
    init_stage2, projection_layer_forward, segment_forward, ModelParams, TeacherStudentPair, UNetConfig, ENCODER,
    HEAD,
};
use phantom::Split;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::{Real, Tape, Var};

use crate::config::TrainConfig;
use crate::data::{input_noise, perturb, Dataset, NoiseRole};
use crate::error::{Result, TrainError};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage2Batch {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Everything observable about one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub epoch: usize,
    pub loss_seg: f64,
    pub loss_cons: f64,
    /// Raw local contrastive loss; 0 when the term is gated off or could not be formed.
    pub loss_lcl: f64,
    /// `λ1·L_lcl` as it entered the objective.
    pub lcl_contribution: f64,
    pub lambda3: f64,
    pub total: f64,
    pub bank_lengths: Vec<usize>,
    /// Largest |grad| found on any teacher parameter (teacher is bound as constants, so 0).
    pub teacher_grad_max: f64,
}

pub struct Stage2Trainer<T: Real> {
    cfg: TrainConfig,
    net: UNetConfig,
    weights: LossWeights,
    pub pair: TeacherStudentPair<T>,
    adam: Adam<T>,
    pub bank: MemoryBank,
    rng: ChaCha8Rng,
    step: usize,
    total_steps: usize,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

/// Stage II starting point: encoders from `pretrained` (or freshly initialized from
/// `cfg.seed` when absent), new decoder/output/projection layers, teacher = student.
pub fn stage2_init(cfg: &TrainConfig, pretrained: Option<&ModelParams<f32>>) -> Result<TeacherStudentPair<f32>> {
    let net = UNetConfig::new(cfg.organs);
    let scratch;
    let encoder = match pretrained {
        Some(p) => p,
        None => {
            scratch = net.init(&[ENCODER, HEAD], cfg.seed);
            &scratch
        }
    };
    Ok(init_stage2(&net, encoder, cfg.seed, cfg.ema_alpha)?)
}

impl<T: Real> Stage2Trainer<T> {
    pub fn new(cfg: &TrainConfig, data: &Dataset, pretrained: Option<&ModelParams<f32>>) -> Result<Self> {
        cfg.validate()?;
        let init = stage2_init(cfg, pretrained)?;
        let pair = TeacherStudentPair::new(init.student.cast(), init.teacher.cast(), init.alpha())?;
        let labeled = data.indices(Split::Labeled);
        let unlabeled = if cfg.use_unlabeled {
            data.indices(Split::Unlabeled)
        } else {
            Vec::new()
        };
        if labeled.is_empty() {
            return Err(TrainError::Invalid("no labeled slices".into()));
        }
        if cfg.use_unlabeled && unlabeled.is_empty() {
            return Err(TrainError::Invalid("use_unlabeled is set but there are no unlabeled slices".into()));
        }
        let net = UNetConfig::new(cfg.organs);
        let mut total_steps = cfg.stage2_epochs * Self::steps_per_epoch_for(cfg, labeled.len());
        if cfg.max_steps > 0 {
            total_steps = total_steps.min(cfg.max_steps);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        Ok(Stage2Trainer {
            weights: cfg.loss_weights(),
            bank: MemoryBank::new(cfg.organs, net.proj_dim, cfg.bank_capacity),
            adam: Adam::new(cfg.stage2_lr)?,
            cfg: cfg.clone(),
            net,
            pair,
            rng,
            step: 0,
            total_steps,
            labeled,
            unlabeled,
        })
    }

    fn steps_per_epoch_for(cfg: &TrainConfig, labeled: usize) -> usize {
        labeled.div_ceil(cfg.labeled_per_batch)
    }

    /// One epoch is one pass over the labeled slices.
    pub fn steps_per_epoch(&self) -> usize {
        Self::steps_per_epoch_for(&self.cfg, self.labeled.len())
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Batches for one epoch: labeled slices shuffled and chunked (short chunks are
    /// topped up by sampling with replacement), unlabeled slices drawn with replacement.
    pub fn epoch_batches(&mut self) -> Vec<Stage2Batch> {
        let k = self.cfg.labeled_per_batch;
        let mut order = self.labeled.clone();
        order.shuffle(&mut self.rng);
        order
            .chunks(k)
            .map(|chunk| {
                let mut labeled = chunk.to_vec();
                while labeled.len() < k {
                    labeled.push(self.labeled[self.rng.gen_range(0..self.labeled.len())]);
                }
                let unlabeled = if self.unlabeled.is_empty() {
                    Vec::new()
                } else {
                    (0..self.cfg.unlabeled_per_batch)
                        .map(|_| self.unlabeled[self.rng.gen_range(0..self.unlabeled.len())])
                        .collect()
                };
                Stage2Batch { labeled, unlabeled }
            })
            .collect()
    }

    /// Forward both models, assemble the objective, Adam on the student, EMA on the teacher.
    /// `epoch` is 1-based.
    pub fn step(&mut self, data: &Dataset, batch: &Stage2Batch, epoch: usize) -> Result<StepReport> {
        let (nl, nu) = (batch.labeled.len(), batch.unlabeled.len());
        let mut idx = batch.labeled.clone();
        idx.extend(&batch.unlabeled);
        let labels = data.labels(&batch.labeled)?;
        let x = data.images::<T>(&idx);
        let n = x.numel();
        let xs = perturb(&x, &input_noise(self.cfg.seed, self.step, NoiseRole::Student, n, self.cfg.input_noise));
        let xt = perturb(&x, &input_noise(self.cfg.seed, self.step, NoiseRole::Teacher, n, self.cfg.input_noise));

        let mut tape = Tape::new();
        let student = self.pair.student.bind(&mut tape, true);
        let teacher = self.pair.teacher.bind(&mut tape, false);
        let xs = tape.constant(xs);
        let xt = tape.constant(xt);
        let (_, dec_s) = segment_forward(&mut tape, &student, xs)?;
        let (_, dec_t) = segment_forward(&mut tape, &teacher, xt)?;
        let q_s = tape.softmax_channels(dec_s.logits)?;
        let q_t = tape.softmax_channels(dec_t.logits)?;

        let logits_l = tape.slice_batch(dec_s.logits, 0, nl)?;
        let seg = dice_ce_loss(&mut tape, logits_l, &labels)?;
        let (qs_l, qt_l) = (tape.slice_batch(q_s, 0, nl)?, tape.slice_batch(q_t, 0, nl)?);
        let mut cons = consistency_loss(&mut tape, qs_l, qt_l)?;
        if nu > 0 {
            let (qs_u, qt_u) = (tape.slice_batch(q_s, nl, nu)?, tape.slice_batch(q_t, nl, nu)?);
            let cons_u = consistency_loss(&mut tape, qs_u, qt_u)?;
            cons = tape.add(cons, cons_u)?;
        }

        let progress = Progress {
            epoch,
            step: self.step,
            total_steps: self.total_steps.max(self.step + 1),
            lcl_start_epoch: self.cfg.lcl_start_epoch,
        };
        let lcl = if self.cfg.lcl_enabled && progress.lcl_active() && nu > 0 {
            Some(self.local_term(&mut tape, &student, &teacher, dec_s.features, dec_t.features, q_t, &labels, nl, nu)?)
        } else {
            None
        };
        let (total, lambda3) = stage2_total(
            &mut tape,
            Stage2Terms { seg, cons, lcl },
            &self.weights,
            progress,
        )?;

        let value = |tape: &Tape<T>, v: Var| tape.value(v).item().as_f64();
        let total_v = value(&tape, total);
        if !total_v.is_finite() {
            return Err(TrainError::NonFinite {
                what: "stage II loss",
                step: self.step,
            });
        }
        let loss_lcl = lcl.map_or(0.0, |v| value(&tape, v));
        let report = StepReport {
            step: self.step,
            epoch,
            loss_seg: value(&tape, seg),
            loss_cons: value(&tape, cons),
            loss_lcl,
            lcl_contribution: if lcl.is_some() { self.weights.lambda1 * loss_lcl } else { 0.0 },
            lambda3,
            total: total_v,
            bank_lengths: (1..=self.bank.classes()).map(|c| self.bank.buffer(c).len()).collect(),
            teacher_grad_max: 0.0,
        };

        tape.backward(total)?;
        let teacher_grad_max = teacher
            .iter()
            .filter_map(|(_, v)| tape.grad(v))
            .map(|g| g.max_abs().as_f64())
            .fold(0.0, f64::max);
        let grads = student.grads(&tape);
        self.adam.step(&mut self.pair.student, &grads)?;
        self.pair.ema_update()?;
        self.step += 1;
        Ok(StepReport {
            teacher_grad_max,
            ..report
        })
    }

    /// Teacher centers of the labeled images go into the bank; student centers of the
    /// unlabeled images, masked by the teacher's argmax, are contrasted against it.
    /// The per-image losses are averaged over the unlabeled images.
    #[allow(clippy::too_many_arguments)]
    fn local_term(
        &mut self,
        tape: &mut Tape<T>,
        student: &nets::Bound,
        teacher: &nets::Bound,
        features_s: Var,
        features_t: Var,
        q_t: Var,
        labels: &[u8],
        nl: usize,
        nu: usize,
    ) -> Result<Var> {
        let proj_t = projection_layer_forward(tape, teacher, features_t)?;
        let proj_t_l = tape.slice_batch(proj_t, 0, nl)?;
        for set in mask_centers(tape, proj_t_l, labels, self.cfg.organs)? {
            self.bank.push_centers(tape, &set)?;
        }

        let probs = tape.value(q_t);
        let c = probs.shape()[1];
        let hw = probs.shape()[2] * probs.shape()[3];
        let mut pseudo = Vec::with_capacity(nu * hw);
        for n in nl..nl + nu {
            for p in 0..hw {
                let mut best = 0;
                for k in 1..c {
                    if probs.data()[(n * c + k) * hw + p] > probs.data()[(n * c + best) * hw + p] {
                        best = k;
                    }
                }
                pseudo.push(best as u8);
            }
        }
        let proj_s = projection_layer_forward(tape, student, features_s)?;
        let proj_s_u = tape.slice_batch(proj_s, nl, nu)?;
        let mut sum: Option<Var> = None;
        for set in mask_centers(tape, proj_s_u, &pseudo, self.cfg.organs)? {
            let l = lcl_loss(tape, &set, &self.bank, self.cfg.tau)?;
            sum = Some(match sum {
                None => l,
                Some(s) => tape.add(s, l)?,
            });
        }
        let sum = sum.expect("nu > 0");
        Ok(tape.scale(sum, T::of(1.0 / nu as f64)))
    }

    pub fn net(&self) -> &UNetConfig {
        &self.net
    }
}
