//! Sign-restriction identification of a single structural shock.
//!
//! Candidate impulse vectors are `alpha = L q` with `q` uniform on the unit
//! sphere and `L` the Cholesky factor of the VAR innovation covariance, so
//! each candidate is a one-standard-deviation structural shock. Candidates
//! are oriented so the shock variable's own impact response is negative
//! (a cut). Two modes are available: rejection sampling, which keeps every
//! candidate meeting all signs, and penalty minimization, which returns the
//! single candidate minimizing the penalty
//!
//! ```text
//! Σ_{restricted j, h ≤ K} f(−s_j · r_{j,h} / scale_j),  f(x) = x (x ≤ 0), slope·x (x > 0)
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::var::{apply_ma, reduced_form_irf, VarModel};

pub const DEFAULT_PENALTY_SLOPE: f64 = 100.0;
pub const DEFAULT_RESTRICTED_HORIZON: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+", alias = "positive")]
    Positive,
    #[serde(rename = "-", alias = "negative")]
    Negative,
    #[serde(rename = "0", alias = "≅0", alias = "free", alias = "unrestricted")]
    Unrestricted,
}

impl Sign {
    fn required(self) -> Option<f64> {
        match self {
            Sign::Positive => Some(1.0),
            Sign::Negative => Some(-1.0),
            Sign::Unrestricted => None,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "+",
            Sign::Negative => "-",
            Sign::Unrestricted => "0",
        })
    }
}

impl FromStr for Sign {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+" | "pos" | "positive" => Ok(Sign::Positive),
            "-" | "neg" | "negative" => Ok(Sign::Negative),
            "0" | "~" | "≅0" | "free" | "unrestricted" => Ok(Sign::Unrestricted),
            other => Err(format!("unknown sign `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignRestrictionSpec {
    /// One entry per VAR variable, in model order.
    pub signs: Vec<Sign>,
    /// Restrictions bind at horizons 0..=horizon.
    pub horizon: usize,
    /// Index of the tax-rate variable defining the shock.
    pub shock_index: usize,
    pub penalty_slope: f64,
}

impl SignRestrictionSpec {
    pub fn new(signs: Vec<Sign>, horizon: usize, shock_index: usize, penalty_slope: f64) -> Result<Self> {
        if !signs.iter().any(|s| *s != Sign::Unrestricted) {
            return Err(FavarError::InvalidArgument(
                "sign restriction spec needs at least one restricted variable".into(),
            ));
        }
        Self::vacuous_checked(signs, horizon, shock_index, penalty_slope)
    }

    /// A spec with no binding restrictions: every oriented draw is accepted.
    pub fn vacuous(n: usize, shock_index: usize) -> Result<Self> {
        Self::vacuous_checked(vec![Sign::Unrestricted; n], 0, shock_index, DEFAULT_PENALTY_SLOPE)
    }

    fn vacuous_checked(signs: Vec<Sign>, horizon: usize, shock_index: usize, penalty_slope: f64) -> Result<Self> {
        if shock_index >= signs.len() {
            return Err(FavarError::InvalidArgument(format!(
                "shock index {shock_index} out of range for {} variables",
                signs.len()
            )));
        }
        if !(penalty_slope > 0.0) {
            return Err(FavarError::InvalidArgument(format!(
                "penalty slope must be positive, got {penalty_slope}"
            )));
        }
        Ok(Self {
            signs,
            horizon,
            shock_index,
            penalty_slope,
        })
    }

    pub fn n(&self) -> usize {
        self.signs.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseVector {
    pub q: DVector<f64>,
    pub alpha: DVector<f64>,
    pub meets_signs: bool,
    pub penalty: f64,
}

impl ImpulseVector {
    fn from_q(l: &DMatrix<f64>, q: DVector<f64>) -> Self {
        let alpha = l * &q;
        Self {
            q,
            alpha,
            meets_signs: false,
            penalty: f64::NAN,
        }
    }

    /// Flips the vector if needed so `alpha[shock_index] <= 0`.
    pub fn orient(&mut self, shock_index: usize) {
        if self.alpha[shock_index] > 0.0 {
            self.q.neg_mut();
            self.alpha.neg_mut();
        }
    }
}

/// Draws `q` uniformly on the unit sphere and maps it through `l`.
pub fn draw_candidate<R: Rng + ?Sized>(l: &DMatrix<f64>, rng: &mut R) -> ImpulseVector {
    let n = l.ncols();
    loop {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = z.norm();
        if norm > 1e-300 {
            return ImpulseVector::from_q(l, z / norm);
        }
    }
}

/// Per-draw generator: one ChaCha stream per draw index.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Checks the signs of `irf` (rows = horizons from 0, columns = variables)
/// at horizons 0..=K and returns `(meets_signs, penalty)`.
pub fn evaluate_restrictions(irf: &DMatrix<f64>, spec: &SignRestrictionSpec, scales: &[f64]) -> Result<(bool, f64)> {
    if irf.ncols() != spec.n() || scales.len() != spec.n() {
        return Err(FavarError::DimensionMismatch(format!(
            "{} response columns, {} signs, {} scales",
            irf.ncols(),
            spec.n(),
            scales.len()
        )));
    }
    if irf.nrows() <= spec.horizon {
        return Err(FavarError::DimensionMismatch(format!(
            "responses cover {} horizons, restrictions bind through {}",
            irf.nrows(),
            spec.horizon
        )));
    }
    let mut meets = true;
    let mut penalty = 0.0;
    for (j, sign) in spec.signs.iter().enumerate() {
        let Some(s) = sign.required() else { continue };
        let scale = scales[j];
        if !(scale > 0.0) {
            return Err(FavarError::ZeroScale(j));
        }
        for h in 0..=spec.horizon {
            let r = irf[(h, j)];
            if !(s * r > 0.0) {
                meets = false;
            }
            let x = -s * r / scale;
            penalty += if x <= 0.0 { x } else { spec.penalty_slope * x };
        }
    }
    Ok((meets, penalty))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentMode {
    #[default]
    Rejection,
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    /// Accepted draws wanted in rejection mode.
    pub n_target: usize,
    pub max_attempts: usize,
    pub seed: u64,
    pub mode: IdentMode,
    /// Horizon of the stored structural responses.
    pub horizon: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            n_target: 1000,
            max_attempts: 1_000_000,
            seed: 0,
            mode: IdentMode::Rejection,
            horizon: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcceptedDraw {
    /// Position of the draw in the candidate stream.
    pub index: usize,
    pub impulse: ImpulseVector,
    /// (horizon+1)×n structural responses.
    pub irf: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct DrawSet {
    pub accepted: Vec<AcceptedDraw>,
    pub n_attempted: usize,
    pub seed: u64,
    pub mode: IdentMode,
    /// Penalty mode: index into `accepted` of the minimizer.
    pub minimizer: Option<usize>,
}

impl DrawSet {
    pub fn acceptance_rate(&self) -> f64 {
        if self.n_attempted == 0 {
            0.0
        } else {
            self.accepted.len() as f64 / self.n_attempted as f64
        }
    }

    pub fn irfs(&self) -> Vec<DMatrix<f64>> {
        self.accepted.iter().map(|d| d.irf.clone()).collect()
    }
}

const BATCH: usize = 2048;

struct Evaluator<'a> {
    chol: &'a DMatrix<f64>,
    psi: Vec<DMatrix<f64>>,
    spec: &'a SignRestrictionSpec,
    scales: Vec<f64>,
}

impl Evaluator<'_> {
    fn score(&self, mut imp: ImpulseVector) -> Result<ImpulseVector> {
        imp.orient(self.spec.shock_index);
        let irf = apply_ma(&self.psi[..=self.spec.horizon], &imp.alpha);
        let (meets, penalty) = evaluate_restrictions(&irf, self.spec, &self.scales)?;
        imp.meets_signs = meets;
        imp.penalty = penalty;
        Ok(imp)
    }

    fn candidate(&self, seed: u64, index: usize) -> Result<ImpulseVector> {
        let mut rng = draw_rng(seed, index as u64);
        self.score(draw_candidate(self.chol, &mut rng))
    }

    fn score_q(&self, q: DVector<f64>) -> Result<ImpulseVector> {
        self.score(ImpulseVector::from_q(self.chol, q))
    }
}

/// Identifies one structural shock under `spec`. Results depend only on the
/// model, the spec and `opts`, never on the number of worker threads.
pub fn identify_tax_shock(model: &VarModel, spec: &SignRestrictionSpec, opts: &IdentifyOptions) -> Result<DrawSet> {
    if spec.n() != model.n() {
        return Err(FavarError::DimensionMismatch(format!(
            "spec has {} signs for a {}-variable VAR",
            spec.n(),
            model.n()
        )));
    }
    if opts.max_attempts == 0 || (opts.mode == IdentMode::Rejection && opts.n_target == 0) {
        return Err(FavarError::InvalidArgument(
            "n_target and max_attempts must be >= 1".into(),
        ));
    }
    let psi_full = reduced_form_irf(model, opts.horizon.max(spec.horizon));
    let eval = Evaluator {
        chol: &model.chol,
        psi: psi_full.clone(),
        spec,
        scales: model.residual_scales(),
    };
    let full_irf = |alpha: &DVector<f64>| apply_ma(&psi_full[..=opts.horizon], alpha);

    match opts.mode {
        IdentMode::Rejection => {
            let mut accepted = Vec::new();
            let mut attempted = 0;
            let mut start = 0;
            'outer: while start < opts.max_attempts {
                let end = (start + BATCH).min(opts.max_attempts);
                let batch: Vec<ImpulseVector> = (start..end)
                    .into_par_iter()
                    .map(|i| eval.candidate(opts.seed, i))
                    .collect::<Result<_>>()?;
                for (offset, imp) in batch.into_iter().enumerate() {
                    attempted = start + offset + 1;
                    if imp.meets_signs {
                        let irf = full_irf(&imp.alpha);
                        accepted.push(AcceptedDraw {
                            index: start + offset,
                            impulse: imp,
                            irf,
                        });
                        if accepted.len() == opts.n_target {
                            break 'outer;
                        }
                    }
                }
                start = end;
            }
            if accepted.is_empty() {
                return Err(FavarError::IdentificationFailed {
                    attempts: attempted,
                    accepted: 0,
                    rate: 0.0,
                });
            }
            Ok(DrawSet {
                accepted,
                n_attempted: attempted,
                seed: opts.seed,
                mode: IdentMode::Rejection,
                minimizer: None,
            })
        }
        IdentMode::Penalty => {
            let mut best: Option<(usize, ImpulseVector)> = None;
            let mut start = 0;
            while start < opts.max_attempts {
                let end = (start + BATCH).min(opts.max_attempts);
                let batch: Vec<ImpulseVector> = (start..end)
                    .into_par_iter()
                    .map(|i| eval.candidate(opts.seed, i))
                    .collect::<Result<_>>()?;
                for (offset, imp) in batch.into_iter().enumerate() {
                    if best.as_ref().is_none_or(|(_, b)| imp.penalty < b.penalty) {
                        best = Some((start + offset, imp));
                    }
                }
                start = end;
            }
            let (index, start_vec) = best.expect("max_attempts >= 1");
            let polished = polish(&eval, start_vec)?;
            let irf = full_irf(&polished.alpha);
            Ok(DrawSet {
                accepted: vec![AcceptedDraw {
                    index,
                    impulse: polished,
                    irf,
                }],
                n_attempted: opts.max_attempts,
                seed: opts.seed,
                mode: IdentMode::Penalty,
                minimizer: Some(0),
            })
        }
    }
}

const POLISH_START_STEP: f64 = 0.1;
const POLISH_MIN_STEP: f64 = 1e-9;
const POLISH_TOL: f64 = 1e-8;
const POLISH_MAX_SWEEPS: usize = 20_000;

/// Orthonormal basis of the tangent space of the sphere at `q`.
fn tangent_basis(q: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = q.len();
    let mut basis: Vec<DVector<f64>> = vec![q.clone()];
    for i in 0..n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for b in &basis {
            let d = b.dot(&v);
            v -= b * d;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// Coordinate search on the sphere around `start`, halving the step when no
/// move improves the penalty by more than the tolerance.
fn polish(eval: &Evaluator<'_>, start: ImpulseVector) -> Result<ImpulseVector> {
    let mut best = start;
    let mut step = POLISH_START_STEP;
    let mut sweeps = 0;
    while step > POLISH_MIN_STEP && sweeps < POLISH_MAX_SWEEPS {
        sweeps += 1;
        let mut improved = false;
        for dir in tangent_basis(&best.q) {
            for sgn in [1.0, -1.0] {
                let moved = &best.q + &dir * (sgn * step);
                let cand = eval.score_q(moved.normalize())?;
                if cand.penalty < best.penalty - POLISH_TOL {
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(signs: &[Sign], k: usize, shock: usize) -> SignRestrictionSpec {
        SignRestrictionSpec::new(signs.to_vec(), k, shock, DEFAULT_PENALTY_SLOPE).unwrap()
    }

    #[test]
    fn sign_parsing() {
        assert_eq!("+".parse::<Sign>().unwrap(), Sign::Positive);
        assert_eq!("negative".parse::<Sign>().unwrap(), Sign::Negative);
        assert_eq!("0".parse::<Sign>().unwrap(), Sign::Unrestricted);
        assert!("?".parse::<Sign>().is_err());
    }

    #[test]
    fn identity_chol_with_unit_q() {
        let l = DMatrix::<f64>::identity(3, 3);
        let imp = ImpulseVector::from_q(&l, DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(imp.alpha, DVector::from_vec(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn draws_are_unit_vectors() {
        let l = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 3.0]);
        for i in 0..100 {
            let imp = draw_candidate(&l, &mut draw_rng(7, i));
            assert!((imp.q.norm() - 1.0).abs() < 1e-12);
            assert!((&l * &imp.q - &imp.alpha).amax() == 0.0);
        }
    }

    #[test]
    fn penalty_cells() {
        let s = spec(&[Sign::Positive, Sign::Unrestricted], 0, 1);
        let scales = [2.0, 1.0];
        let good = DMatrix::from_row_slice(1, 2, &[2.0, 5.0]);
        assert_eq!(evaluate_restrictions(&good, &s, &scales).unwrap(), (true, -1.0));
        let bad = DMatrix::from_row_slice(1, 2, &[-2.0, 5.0]);
        assert_eq!(evaluate_restrictions(&bad, &s, &scales).unwrap(), (false, 100.0));
    }

    #[test]
    fn penalty_hand_table() {
        // 3 variables (+, -, +), K = 2, unit scales except var 2 (scale 2).
        let s = spec(&[Sign::Positive, Sign::Negative, Sign::Positive], 2, 0);
        let scales = [1.0, 1.0, 2.0];
        let irf = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.5, -1.0, 1.0, //
                -0.2, 0.3, 4.0, //
                1.0, -0.5, -1.0,
            ],
        );
        // var0: -0.5, +20, -1.0   var1: -1.0, +30, -0.5   var2: -0.5, -2.0, +50
        let expected = -0.5 + 20.0 - 1.0 - 1.0 + 30.0 - 0.5 - 0.5 - 2.0 + 50.0;
        let (meets, pen) = evaluate_restrictions(&irf, &s, &scales).unwrap();
        assert!(!meets);
        assert!((pen - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_errors() {
        let s = spec(&[Sign::Positive], 0, 0);
        let irf = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            evaluate_restrictions(&irf, &s, &[0.0]),
            Err(FavarError::ZeroScale(0))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(SignRestrictionSpec::new(vec![Sign::Unrestricted; 3], 2, 0, 100.0).is_err());
        assert!(SignRestrictionSpec::new(vec![Sign::Positive; 3], 2, 3, 100.0).is_err());
        assert!(SignRestrictionSpec::new(vec![Sign::Positive; 3], 2, 0, 0.0).is_err());
        assert!(SignRestrictionSpec::vacuous(3, 1).is_ok());
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let q = DVector::from_vec(vec![0.6, 0.0, 0.8, 0.0]);
        let b = tangent_basis(&q);
        assert_eq!(b.len(), 3);
        for (i, u) in b.iter().enumerate() {
            assert!(u.dot(&q).abs() < 1e-12);
            for v in &b[i + 1..] {
                assert!(u.dot(v).abs() < 1e-12);
            }
        }
    }
}
