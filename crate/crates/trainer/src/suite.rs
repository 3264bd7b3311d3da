//! Double-precision finite-difference suite over every loss and the full network.

use losses::{consistency_loss, dice_ce_loss, gcl_loss, lcl_loss, mask_centers, LossError, MaskCenterSet, MemoryBank};
use nets::{
    encoder_forward, projection_head_forward, projection_layer_forward, segment_forward, Bound, ModelParams,
    NetError, UNetConfig, DECODER, ENCODER, HEAD, OUTPUT, PROJECTION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tensorgrad::{grad_check, grad_check_coverage, Coverage, Tape, Tensor, TensorError, Var, FD_STEP};

pub const SUITE_TOLERANCE: f64 = 1e-6;
pub const SUITE_FIXTURES: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    /// Worst relative error of each fixture.
    pub errors: Vec<f64>,
}

impl SuiteResult {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.errors.iter().all(|&e| e <= SUITE_TOLERANCE)
    }
}

fn from_loss(e: LossError) -> TensorError {
    match e {
        LossError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "suite",
            detail: other.to_string(),
        },
    }
}

fn from_net(e: NetError) -> TensorError {
    match e {
        NetError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "suite",
            detail: other.to_string(),
        },
    }
}

fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::from_fn(vec![n, d], |_| rng.sample::<f64, _>(StandardNormal));
    for row in t.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    t
}

fn view_similarity(b: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pos: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..1.0)).collect();
    let n = 2 * b;
    (0..n * n).map(|k| 1.0 - (pos[k / n / 2] - pos[k % n / 2]).abs()).collect()
}

fn gcl(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = unit_rows(8, 8, &mut rng);
    let s = view_similarity(4, &mut rng);
    let r = grad_check(
        |t: &mut Tape<f64>, v: &[Var]| gcl_loss(t, v[0], &s, 0.65, 0.1).map_err(from_loss),
        &[z],
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

fn lcl(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = MemoryBank::new(3, 8, 16);
    for _ in 0..4 {
        let push: Vec<Option<Vec<f64>>> = (0..3).map(|_| Some((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
        bank.push(&push).map_err(from_loss)?;
    }
    let rows = uniform(vec![3, 8], -1.0, 1.0, &mut rng);
    let r = grad_check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let set = MaskCenterSet {
                centers: v[0],
                present: vec![true; 3],
                counts: vec![1; 3],
            };
            lcl_loss(t, &set, &bank, 0.1).map_err(from_loss)
        },
        &[rows],
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

fn dice_ce(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = uniform(vec![1, 4, 8, 8], -3.0, 3.0, &mut rng);
    let labels: Vec<u8> = (0..64).map(|_| rng.gen_range(0..4)).collect();
    let r = grad_check(
        |t: &mut Tape<f64>, v: &[Var]| dice_ce_loss(t, v[0], &labels).map_err(from_loss),
        &[logits],
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

fn consistency(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = uniform(vec![2, 4, 4, 4], -2.0, 2.0, &mut rng);
    let teacher = uniform(vec![2, 4, 4, 4], -2.0, 2.0, &mut rng);
    let r = grad_check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let qs = t.softmax_channels(v[0])?;
            let tv = t.constant(teacher.clone());
            let qt = t.softmax_channels(tv)?;
            consistency_loss(t, qs, qt).map_err(from_loss)
        },
        &[s],
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

fn centers(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = uniform(vec![2, 4, 4, 4], -1.0, 1.0, &mut rng);
    let mask: Vec<u8> = (0..32).map(|_| rng.gen_range(0..=3)).collect();
    let w = uniform(vec![3, 4], -1.0, 1.0, &mut rng);
    let r = grad_check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let wv = t.constant(w.clone());
            let mut total = t.constant(Tensor::scalar(0.0));
            for set in mask_centers(t, v[0], &mask, 3).map_err(from_loss)? {
                let p = t.mul(set.centers, wv)?;
                let p = t.sum(p);
                total = t.add(total, p)?;
            }
            Ok(total)
        },
        &[f],
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

/// Smallest |ReLU input| a network fixture may have: ten finite-difference steps.
pub const MIN_RELU_MARGIN: f64 = 10.0 * FD_STEP;
const FIXTURE_ATTEMPTS: u64 = 64;

/// Network fixture: He-initialized weights with small positive biases and a
/// 2×1×8×8 input, redrawn until every ReLU input is at least [`MIN_RELU_MARGIN`]
/// from its kink. Every input pixel is checked; per parameter tensor the 8
/// coordinates with the largest gradient are checked.
fn network(
    prefixes: &[&str],
    seed: u64,
    f: impl Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var, TensorError>,
) -> Result<f64, TensorError> {
    for attempt in 0..FIXTURE_ATTEMPTS {
        let draw = seed + 1000 * attempt;
        let mut params: ModelParams<f64> = UNetConfig::new(3).init(prefixes, draw);
        let mut rng = ChaCha8Rng::seed_from_u64(draw + 500);
        for (name, t) in params.iter_mut() {
            if name.ends_with(".bias") {
                t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(0.05..0.3));
            }
        }
        let names: Vec<String> = params.names().map(str::to_owned).collect();
        let mut inputs = vec![uniform(vec![2, 1, 8, 8], 0.0, 1.0, &mut rng)];
        inputs.extend(params.iter().map(|(_, t)| t.clone()));
        let fun = |t: &mut Tape<f64>, v: &[Var]| {
            let b = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
            f(t, &b, v[0])
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        fun(&mut tape, &vars)?;
        if tape.relu_margin().is_some_and(|m| m < MIN_RELU_MARGIN) {
            continue;
        }
        let mut coverage = vec![Coverage::Largest(8); inputs.len()];
        coverage[0] = Coverage::All;
        let r = grad_check_coverage(fun, &inputs, FD_STEP, &coverage)?;
        return Ok(r.max_rel_error);
    }
    Err(TensorError::Invalid {
        op: "suite",
        detail: format!("no fixture within {FIXTURE_ATTEMPTS} draws keeps ReLU inputs {MIN_RELU_MARGIN:e} from zero"),
    })
}

fn unet(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 900);
    let labels: Vec<u8> = (0..128).map(|_| rng.gen_range(0..4)).collect();
    let w = uniform(vec![2, 32, 8, 8], -1.0, 1.0, &mut rng);
    network(&[ENCODER, DECODER, OUTPUT, PROJECTION], seed, |t, b, x| {
        let (_, dec) = segment_forward(t, b, x).map_err(from_net)?;
        let seg = dice_ce_loss(t, dec.logits, &labels).map_err(from_loss)?;
        let proj = projection_layer_forward(t, b, dec.features).map_err(from_net)?;
        let wv = t.constant(w.clone());
        let p = t.mul(proj, wv)?;
        let p = t.sum(p);
        t.add(seg, p)
    })
}

fn encoder_head(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 700);
    let s = view_similarity(1, &mut rng);
    network(&[ENCODER, HEAD], seed, |t, b, x| {
        let enc = encoder_forward(t, b, x).map_err(from_net)?;
        let z = projection_head_forward(t, b, enc.bottleneck).map_err(from_net)?;
        // a single pair has identically zero loss, so weight the embedding too
        let l = gcl_loss(t, z, &s, 0.65, 0.1).map_err(from_loss)?;
        let w = t.constant(Tensor::from_fn(vec![2, 64], |i| ((i * 37 % 11) as f64 - 5.0) / 5.0));
        let p = t.mul(z, w)?;
        let p = t.sum(p);
        t.add(l, p)
    })
}

type Check = fn(u64) -> Result<f64, TensorError>;

pub const SUITE: [(&str, Check); 7] = [
    ("gcl_loss", gcl),
    ("lcl_loss", lcl),
    ("dice_ce_loss", dice_ce),
    ("consistency_loss", consistency),
    ("mask_centers", centers),
    ("unet_end_to_end", unet),
    ("encoder_projection_head", encoder_head),
];

/// Runs every check on [`SUITE_FIXTURES`] fixtures.
pub fn gradient_suite() -> Result<Vec<SuiteResult>, TensorError> {
    SUITE
        .iter()
        .map(|&(name, check)| {
            let errors = (0..SUITE_FIXTURES).map(check).collect::<Result<_, _>>()?;
            Ok(SuiteResult { name, errors })
        })
        .collect()
}
