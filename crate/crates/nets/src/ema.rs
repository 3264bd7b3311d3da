use tensorgrad::Real;

use crate::error::{NetError, Result};
use crate::params::ModelParams;
use crate::unet::{UNetConfig, DECODER, ENCODER, HEAD, OUTPUT, PROJECTION};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;

/// Student trained by gradient descent; teacher follows it by exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStudentPair<T> {
    pub student: ModelParams<T>,
    pub teacher: ModelParams<T>,
    alpha: f64,
}

impl<T: Real> TeacherStudentPair<T> {
    pub fn new(student: ModelParams<T>, teacher: ModelParams<T>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(NetError::InvalidDecay(alpha));
        }
        student.check_compatible(&teacher)?;
        Ok(TeacherStudentPair {
            student,
            teacher,
            alpha,
        })
    }

    /// Teacher starts as an exact copy of the student.
    pub fn from_student(student: ModelParams<T>, alpha: f64) -> Result<Self> {
        let teacher = student.clone();
        Self::new(student, teacher, alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `teacher <- alpha * teacher + (1 - alpha) * student` for every parameter,
    /// evaluated as `t + (1 - alpha) (s - t)` so a teacher equal to the student stays bitwise put.
    pub fn ema_update(&mut self) -> Result<()> {
        self.teacher.check_compatible(&self.student)?;
        let b = T::of(1.0 - self.alpha);
        for (name, t) in self.teacher.iter_mut() {
            let s = self.student.get(name)?;
            for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
                *tv += b * (sv - *tv);
            }
        }
        Ok(())
    }
}

/// Builds the Stage II pair: encoders copied from `pretrained`, decoder, output
/// head and projection layer freshly initialized, teacher equal to student.
///
/// `pretrained` must hold every encoder parameter; projection-head parameters are
/// carried along unchanged, anything else is rejected.
pub fn init_stage2(
    config: &UNetConfig,
    pretrained: &ModelParams<f32>,
    seed: u64,
    alpha: f64,
) -> Result<TeacherStudentPair<f32>> {
    let expected = config.names(ENCODER);
    let missing: Vec<String> = expected
        .iter()
        .filter(|n| !pretrained.contains(n))
        .cloned()
        .collect();
    let extra: Vec<String> = pretrained
        .names()
        .filter(|n| !(n.starts_with(ENCODER) || n.starts_with(HEAD)))
        .map(str::to_owned)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(NetError::NameMismatch { missing, extra });
    }
    let mut student: ModelParams<f32> = config.init(&[DECODER, OUTPUT, PROJECTION], seed);
    let reference: ModelParams<f32> = config.init(&[ENCODER, HEAD], 0);
    for (name, t) in pretrained.iter() {
        if let Ok(r) = reference.get(name) {
            if r.shape() != t.shape() {
                return Err(NetError::ShapeMismatch {
                    name: name.to_owned(),
                    left: t.shape().to_vec(),
                    right: r.shape().to_vec(),
                });
            }
        }
        student.insert(name, t.clone());
    }
    TeacherStudentPair::from_student(student, alpha)
}
