//! A plain, tape-free forward pass of the bag models and survival losses,
//! generic over the scalar type.
//!
//! It serves two purposes: an independent check of the tape forward pass in
//! f64, and the function evaluated by finite differences in double-double
//! precision, where f64 rounding noise (about `ε·|f|/h ≈ 1e-10` at
//! `h = 1e-6`) would swamp gradients that are tiny or exactly zero.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::mil::{gcn::knn_graph, EtaKind, MilModel, ModelError, ModelFamily};
use crate::survival::{comparable_pairs, SurvivalLabel};
use crate::tensor::Tensor;

/// Scalar arithmetic needed by the reference forward pass.
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }

    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Unevaluated sum `hi + lo` of two f64 with `|lo| <= ulp(hi) / 2`, giving
/// roughly 106 bits of significand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const LN_2: Self = Self {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, y: Self) -> Self {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, y: Self) -> Self {
        self + (-y)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, y: Self) -> Self {
        let (p, e) = two_prod(self.hi, y.hi);
        Self::renorm(p, e + (self.hi * y.lo + self.lo * y.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, y: Self) -> Self {
        let q1 = self.hi / y.hi;
        let r = self - y * Self::new(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Self::new(q2);
        let q3 = r.hi / y.hi;
        Self::renorm(q1, q2) + Self::new(q3)
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        Self::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::new(0.0);
        }
        // x = k ln2 + r, |r| <= ln2 / 2; exp(r) = exp(r / 512)^512
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - Self::LN_2 * Self::new(k)).scale_pow2(-9);
        let mut term = Self::new(1.0);
        let mut sum = Self::new(1.0);
        for i in 1..=14 {
            term = term * r / Self::new(i as f64);
            sum = sum + term;
        }
        for _ in 0..9 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        // one Newton step on exp(y) = x from the f64 logarithm
        let y = Self::new(self.hi.ln());
        y + self * (-y).exp() - Self::new(1.0)
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(self.hi.sqrt());
        }
        let a = self.hi.sqrt();
        let y = Self::new(a);
        y + (self - y * y) * Self::new(0.5 / a)
    }

    fn tanh(self) -> Self {
        let neg = self.hi < 0.0;
        let ax = if neg { -self } else { self };
        let t = (-(ax + ax)).exp();
        let v = (Self::new(1.0) - t) / (Self::new(1.0) + t);
        if neg {
            -v
        } else {
            v
        }
    }
}

type Matrix<R> = Vec<Vec<R>>;

fn lift<R: Real>(t: &Tensor) -> Matrix<R> {
    (0..t.rows())
        .map(|i| t.row(i).iter().map(|&v| R::from_f64(v)).collect())
        .collect()
}

fn vector<R: Real>(t: &Tensor) -> Vec<R> {
    t.data().iter().map(|&v| R::from_f64(v)).collect()
}

fn matmul<R: Real>(x: &Matrix<R>, w: &Matrix<R>) -> Matrix<R> {
    let cols = w.first().map_or(0, Vec::len);
    x.iter()
        .map(|row| {
            (0..cols)
                .map(|c| row.iter().zip(w).fold(R::zero(), |acc, (&a, wr)| acc + a * wr[c]))
                .collect()
        })
        .collect()
}

fn add_bias<R: Real>(mut x: Matrix<R>, b: &[R]) -> Matrix<R> {
    for row in &mut x {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v = *v + bb;
        }
    }
    x
}

fn map<R: Real>(mut x: Matrix<R>, f: impl Fn(R) -> R) -> Matrix<R> {
    for row in &mut x {
        for v in row.iter_mut() {
            *v = f(*v);
        }
    }
    x
}

/// Model parameters lifted to `R`, looked up by name.
struct Lifted<'a, R> {
    model: &'a MilModel,
    _marker: std::marker::PhantomData<R>,
}

impl<R: Real> Lifted<'_, R> {
    fn matrix(&self, name: &str) -> Result<Matrix<R>, ModelError> {
        Ok(lift(self.tensor(name)?))
    }

    fn vector(&self, name: &str) -> Result<Vec<R>, ModelError> {
        Ok(vector(self.tensor(name)?))
    }

    fn tensor(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.model.params().get(name).ok_or_else(|| ModelError::Param {
            name: name.to_string(),
            problem: "is missing".into(),
        })
    }

    fn dense(&self, prefix: &str, x: &Matrix<R>) -> Result<Matrix<R>, ModelError> {
        let w = self.matrix(&format!("{prefix}.weight"))?;
        let b = self.vector(&format!("{prefix}.bias"))?;
        Ok(add_bias(matmul(x, &w), &b))
    }

    fn attention(&self, prefix: &str, h: &Matrix<R>, mask: &[bool]) -> Result<Vec<R>, ModelError> {
        let t = map(self.dense(&format!("{prefix}.tanh"), h)?, R::tanh);
        let s = map(self.dense(&format!("{prefix}.gate"), h)?, R::sigmoid);
        let gated: Matrix<R> = t
            .iter()
            .zip(&s)
            .map(|(tr, sr)| tr.iter().zip(sr).map(|(&a, &b)| a * b).collect())
            .collect();
        let scores: Vec<R> = self.dense(&format!("{prefix}.score"), &gated)?.into_iter().map(|r| r[0]).collect();
        let max = scores
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
            .fold(None, |acc: Option<R>, s| match acc {
                Some(a) if a >= s => Some(a),
                _ => Some(s),
            })
            .ok_or(ModelError::EmptyBag)?;
        let exps: Vec<R> = scores
            .iter()
            .zip(mask)
            .map(|(&s, &m)| if m { (s - max).exp() } else { R::zero() })
            .collect();
        let z = exps.iter().fold(R::zero(), |acc, &e| acc + e);
        Ok(exps.into_iter().map(|e| e / z).collect())
    }
}

/// Risk of one (possibly padded) bag computed without the tape.
pub fn reference_risk<R: Real>(model: &MilModel, features: &Tensor, mask: &[bool]) -> Result<R, ModelError> {
    let cfg = model.config();
    if features.cols() != cfg.input_dim {
        return Err(ModelError::Dimension {
            expected: cfg.input_dim,
            got: features.cols(),
        });
    }
    if mask.len() != features.rows() {
        return Err(ModelError::Mask {
            mask: mask.len(),
            rows: features.rows(),
        });
    }
    let p = Lifted::<R> {
        model,
        _marker: std::marker::PhantomData,
    };
    let mut h: Matrix<R> = lift(features);
    for i in 0..cfg.encoder_dims.len() {
        h = map(p.dense(&format!("encoder.{i}"), &h)?, R::relu);
    }
    if cfg.family == ModelFamily::DeepGraphConv {
        let neighbors = knn_graph(features, mask, cfg.gcn_k_neighbors)?;
        for layer in 0..2 {
            let agg: Matrix<R> = neighbors
                .iter()
                .enumerate()
                .map(|(i, nbrs)| {
                    let deg = R::from_f64((nbrs.len() + 1) as f64);
                    (0..h[i].len())
                        .map(|c| nbrs.iter().fold(h[i][c], |acc, &j| acc + h[j][c]) / deg)
                        .collect()
                })
                .collect();
            h = map(matmul(&agg, &p.matrix(&format!("gcn.{layer}.weight"))?), R::relu);
        }
    }
    let a = if cfg.family.has_learned_attention() {
        p.attention("attention", &h, mask)?
    } else {
        let valid = mask.iter().filter(|&&m| m).count();
        if valid == 0 {
            return Err(ModelError::EmptyBag);
        }
        let w = R::one() / R::from_f64(valid as f64);
        mask.iter().map(|&m| if m { w } else { R::zero() }).collect()
    };
    let e = h.first().map_or(0, Vec::len);
    let weighted_mean = |vals: &dyn Fn(usize) -> R, a: &[R]| {
        (0..h.len()).fold(R::zero(), |acc, j| acc + a[j] * vals(j))
    };
    let mut pooled: Vec<R> = (0..e).map(|c| weighted_mean(&|j| h[j][c], &a)).collect();
    if cfg.varpool {
        let a_var = if cfg.separate_var_attention() {
            p.attention("var_attention", &h, mask)?
        } else {
            a.clone()
        };
        let v = p.matrix("projections")?;
        let u = matmul(&h, &v);
        for k in 0..cfg.n_projections {
            let mu = weighted_mean(&|j| u[j][k], &a_var);
            let var = weighted_mean(&|j| (u[j][k] - mu) * (u[j][k] - mu), &a_var);
            pooled.push(match cfg.eta {
                EtaKind::Log => (R::from_f64(cfg.eta_eps) + var).ln(),
                EtaKind::Sqrt => var.sqrt(),
                EtaKind::Sigmoid => var.sigmoid(),
            });
        }
    }
    let mut z = vec![pooled];
    for i in 0..cfg.head_dims.len() {
        z = map(p.dense(&format!("head.{i}"), &z)?, R::relu);
    }
    Ok(p.dense(&format!("head.{}", cfg.head_dims.len()), &z)?[0][0])
}

/// Mean sigmoid ranking loss over comparable pairs, negated.
pub fn reference_rank_loss<R: Real>(risks: &[R], labels: &[SurvivalLabel], scale: f64) -> Option<R> {
    let pairs = comparable_pairs(labels);
    if pairs.is_empty() {
        return None;
    }
    let s = R::from_f64(scale);
    let total = pairs
        .pairs()
        .iter()
        .fold(R::zero(), |acc, &(w, b)| acc + (s * (risks[w] - risks[b])).sigmoid());
    Some(-(total / R::from_f64(pairs.len() as f64)))
}

/// Negative Cox partial log-likelihood averaged over events.
pub fn reference_cox_loss<R: Real>(risks: &[R], labels: &[SurvivalLabel]) -> Option<R> {
    let mut total = R::zero();
    let mut events = 0usize;
    for (i, li) in labels.iter().enumerate() {
        if !li.event() {
            continue;
        }
        events += 1;
        let at_risk: Vec<R> = (0..labels.len())
            .filter(|&j| labels[j].time() >= li.time())
            .map(|j| risks[j])
            .collect();
        let max = at_risk
            .iter()
            .copied()
            .fold(at_risk[0], |m, v| if v > m { v } else { m });
        let sum = at_risk.iter().fold(R::zero(), |acc, &v| acc + (v - max).exp());
        total = total + risks[i] - (max + sum.ln());
    }
    (events > 0).then(|| -(total / R::from_f64(events as f64)))
}
