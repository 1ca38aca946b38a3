//! Large-sample theory for the endpoint estimators.
//!
//! The six joint cells that drive the estimators are stacked in the fixed
//! order `(p11^C, p02^C, p12^C, p11^S, p02^S, p12^S)`. Their multinomial CLT
//! covariance is pushed through the gradient of
//! `g(p) = (1 - late_S / late_C, 1 - death_S / death_C)` to give the 2x2
//! covariance of `sqrt(n) * ((S_hat, M_hat) - (S, M))`. All covariances here
//! are in that `sqrt(n)`-standardized scale; divide by the control arm size
//! `n` to get finite-sample variances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Denominator, Error, Result};
use crate::model::{to_joint, ArmParams, JointProbs, TrialParams};
use crate::par::{map_indexed, Execution};
use crate::sampling::{SeedSpec, Stream};

pub type Matrix6 = [[f64; 6]; 6];
pub type Vector6 = [f64; 6];

/// The six cells entering the estimators, in the canonical order.
pub fn cell_vector(control: &JointProbs, screen: &JointProbs) -> Vector6 {
    [control.p11, control.p02, control.p12, screen.p11, screen.p02, screen.p12]
}

/// `g(p) = (S, M)` evaluated on the canonical cell vector.
pub fn endpoint_map(p: &Vector6) -> Result<(f64, f64)> {
    let late_c = p[1] + p[2];
    let death_c = p[0] + p[2];
    check_denominators(late_c, death_c)?;
    Ok((1.0 - (p[4] + p[5]) / late_c, 1.0 - (p[3] + p[5]) / death_c))
}

fn check_denominators(late_c: f64, death_c: f64) -> Result<()> {
    if late_c <= 0.0 {
        return Err(Error::DegenerateDenominator(Denominator::ControlLate));
    }
    if death_c <= 0.0 {
        return Err(Error::DegenerateDenominator(Denominator::ControlDeath));
    }
    Ok(())
}

/// Block-diagonal CLT covariance of the six standardized cell estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub sigma: Matrix6,
    pub n_over_m: f64,
}

fn multinomial_block(cells: [f64; 3], scale: f64) -> [[f64; 3]; 3] {
    let mut block = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            block[i][j] = if i == j {
                cells[i] * (1.0 - cells[i])
            } else {
                -cells[i] * cells[j]
            } * scale;
        }
    }
    block
}

pub fn joint_covariance(control: &JointProbs, screen: &JointProbs, n: u64, m: u64) -> Result<JointCovariance> {
    if n == 0 || m == 0 {
        return Err(Error::Domain("arm sizes must be positive".into()));
    }
    let n_over_m = n as f64 / m as f64;
    let bc = multinomial_block([control.p11, control.p02, control.p12], 1.0);
    let bs = multinomial_block([screen.p11, screen.p02, screen.p12], n_over_m);
    let mut sigma = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = bc[i][j];
            sigma[i + 3][j + 3] = bs[i][j];
        }
    }
    Ok(JointCovariance { sigma, n_over_m })
}

impl JointCovariance {
    /// `a^T Sigma b`.
    pub fn bilinear(&self, a: &Vector6, b: &Vector6) -> f64 {
        self.sigma
            .iter()
            .zip(a.iter())
            .map(|(row, ai)| ai * row.iter().zip(b.iter()).map(|(s, bj)| s * bj).sum::<f64>())
            .sum()
    }
}

/// Gradients of `S` and `M` with respect to the canonical cell vector.
///
/// Both have the sparsity pattern `grad_s = (0, r, r, 0, s, s)` and
/// `grad_m = (t, 0, t, u, 0, u)` with `r, t > 0` (control cells) and
/// `s, u < 0` (screen cells).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointGradients {
    pub grad_s: Vector6,
    pub grad_m: Vector6,
}

impl EndpointGradients {
    pub fn r(&self) -> f64 {
        self.grad_s[1]
    }
    pub fn s(&self) -> f64 {
        self.grad_s[4]
    }
    pub fn t(&self) -> f64 {
        self.grad_m[0]
    }
    pub fn u(&self) -> f64 {
        self.grad_m[3]
    }
}

pub fn endpoint_gradients(p: &Vector6) -> Result<EndpointGradients> {
    let late_c = p[1] + p[2];
    let death_c = p[0] + p[2];
    check_denominators(late_c, death_c)?;
    let late_s = p[4] + p[5];
    let death_s = p[3] + p[5];
    let r = late_s / (late_c * late_c);
    let s = -1.0 / late_c;
    let t = death_s / (death_c * death_c);
    let u = -1.0 / death_c;
    Ok(EndpointGradients {
        grad_s: [0.0, r, r, 0.0, s, s],
        grad_m: [t, 0.0, t, u, 0.0, u],
    })
}

/// Standardized asymptotic covariance of `(S_hat, M_hat)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointCovariance {
    pub var_s: f64,
    pub var_m: f64,
    pub cov_sm: f64,
    /// `None` when either variance is zero.
    pub rho: Option<f64>,
}

impl EndpointCovariance {
    pub fn from_entries(var_s: f64, var_m: f64, cov_sm: f64) -> Self {
        let rho = if var_s > 0.0 && var_m > 0.0 {
            Some((cov_sm / (var_s * var_m).sqrt()).clamp(-1.0, 1.0))
        } else {
            None
        };
        Self {
            var_s,
            var_m,
            cov_sm,
            rho,
        }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.var_s, self.cov_sm], [self.cov_sm, self.var_m]]
    }
}

fn cells_of(params: &TrialParams) -> Result<(JointProbs, JointProbs, Vector6)> {
    let jc = to_joint(&params.control)?;
    let js = to_joint(&params.screen)?;
    let p = cell_vector(&jc, &js);
    Ok((jc, js, p))
}

/// Delta-method covariance `grad_g^T Sigma grad_g`.
pub fn endpoint_covariance(params: &TrialParams, n: u64, m: u64) -> Result<EndpointCovariance> {
    let (jc, js, p) = cells_of(params)?;
    let grads = endpoint_gradients(&p)?;
    let sigma = joint_covariance(&jc, &js, n, m)?;
    Ok(EndpointCovariance::from_entries(
        sigma.bilinear(&grads.grad_s, &grads.grad_s),
        sigma.bilinear(&grads.grad_m, &grads.grad_m),
        sigma.bilinear(&grads.grad_s, &grads.grad_m),
    ))
}

/// The positivity argument for the `S`/`M` covariance, term by term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Certificate {
    /// Control-arm term `p12 p01 + p12 p00 - p11 p02`.
    pub a: f64,
    /// Screen-arm analogue of `a`.
    pub b: f64,
    pub rt: f64,
    pub su: f64,
    pub n_over_m: f64,
    /// `a rt + b su (n/m)`.
    pub cov12: f64,
    /// `p_{D|E} < p_{D|L}` in both arms.
    pub assumption_holds: bool,
}

impl Theorem2Certificate {
    /// All three quantities strictly positive.
    pub fn is_positive(&self) -> bool {
        self.a > 0.0 && self.b > 0.0 && self.cov12 > 0.0
    }
}

fn lethality_term(j: &JointProbs) -> f64 {
    j.p12 * j.p01 + j.p12 * j.p00 - j.p11 * j.p02
}

pub fn theorem2_certificate(params: &TrialParams, n: u64, m: u64) -> Result<Theorem2Certificate> {
    if n == 0 || m == 0 {
        return Err(Error::Domain("arm sizes must be positive".into()));
    }
    let (jc, js, p) = cells_of(params)?;
    let grads = endpoint_gradients(&p)?;
    let a = lethality_term(&jc);
    let b = lethality_term(&js);
    let rt = grads.r() * grads.t();
    let su = grads.s() * grads.u();
    let n_over_m = n as f64 / m as f64;
    Ok(Theorem2Certificate {
        a,
        b,
        rt,
        su,
        n_over_m,
        cov12: a * rt + b * su * n_over_m,
        assumption_holds: params.late_stage_more_lethal(),
    })
}

fn ratio_variance(p_control: f64, p_screen: f64, n_over_m: f64) -> f64 {
    let pc2 = p_control * p_control;
    p_screen * p_screen / (pc2 * pc2) * p_control * (1.0 - p_control)
        + n_over_m / pc2 * p_screen * (1.0 - p_screen)
}

/// Standardized variances of `S_hat` and `M_hat` from the four marginal
/// rates alone, treating the two arms' binomial rates as independent.
///
/// For `1 - p_S / p_C` the variance is
/// `p_S^2 / p_C^4 * p_C (1 - p_C) + (n/m) / p_C^2 * p_S (1 - p_S)`.
pub fn marginal_variances(
    p_late_control: f64,
    p_late_screen: f64,
    p_death_control: f64,
    p_death_screen: f64,
    n: u64,
    m: u64,
) -> Result<(f64, f64)> {
    check_denominators(p_late_control, p_death_control)?;
    if n == 0 || m == 0 {
        return Err(Error::Domain("arm sizes must be positive".into()));
    }
    for p in [p_late_control, p_late_screen, p_death_control, p_death_screen] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("rate {p} outside [0,1]")));
        }
    }
    let n_over_m = n as f64 / m as f64;
    Ok((
        ratio_variance(p_late_control, p_late_screen, n_over_m),
        ratio_variance(p_death_control, p_death_screen, n_over_m),
    ))
}

/// Export shape for covariance and certificate summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub label: String,
    #[serde(rename = "varS")]
    pub var_s: f64,
    #[serde(rename = "varM")]
    pub var_m: f64,
    pub rho: Option<f64>,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub cov12: f64,
    #[serde(rename = "assumptionHolds")]
    pub assumption_holds: bool,
}

pub fn covariance_summary(params: &TrialParams, n: u64, m: u64) -> Result<CovarianceSummary> {
    let cov = endpoint_covariance(params, n, m)?;
    let cert = theorem2_certificate(params, n, m)?;
    Ok(CovarianceSummary {
        label: params.label.clone(),
        var_s: cov.var_s,
        var_m: cov.var_m,
        rho: cov.rho,
        a: cert.a,
        b: cert.b,
        cov12: cert.cov12,
        assumption_holds: cert.assumption_holds,
    })
}

/// Which side of the stage-lethality ordering random draws fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LethalityOrdering {
    /// `p_{D|E} < p_{D|L}` in both arms.
    LateMoreLethal,
    /// `p_{D|E} > p_{D|L}` in both arms.
    EarlyMoreLethal,
}

fn draw_arm<R: Rng + ?Sized>(rng: &mut R, ordering: LethalityOrdering) -> ArmParams {
    let (p_early, p_late) = loop {
        let e = rng.random_range(0.001..0.1);
        let l = rng.random_range(0.001..0.1);
        if e + l < 0.15 {
            break (e, l);
        }
    };
    let (lo, hi) = loop {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        if a != b && a > 0.0 && b > 0.0 {
            break (a.min(b), a.max(b));
        }
    };
    match ordering {
        LethalityOrdering::LateMoreLethal => ArmParams::new(p_early, p_late, lo, hi),
        LethalityOrdering::EarlyMoreLethal => ArmParams::new(p_early, p_late, hi, lo),
    }
}

/// Random trial with realistic incidences: `p_E, p_L ~ U(0.001, 0.1)` with
/// `p_E + p_L < 0.15`, death probabilities uniform on (0, 1) in the requested
/// order.
pub fn draw_params<R: Rng + ?Sized>(rng: &mut R, ordering: LethalityOrdering) -> TrialParams {
    let control = draw_arm(rng, ordering);
    let screen = draw_arm(rng, ordering);
    TrialParams::new("random", control, screen)
}

/// Aggregate of a batch of random certificates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub draws: usize,
    pub min_a: f64,
    pub min_b: f64,
    pub min_cov12: f64,
    /// Draws where the assumption held but some term was not positive.
    pub exceptions: usize,
    pub assumption_held: usize,
}

impl Theorem2Report {
    /// Every draw satisfied the assumption and every term was positive.
    pub fn passed(&self) -> bool {
        self.exceptions == 0 && self.assumption_held == self.draws && self.min_cov12 > 0.0
    }
}

/// Certificates for `draws` random parameter sets (with `n = m`), draw `i`
/// generated from `SeedSpec::new(seed, 0, i)`.
pub fn check_theorem2(draws: usize, seed: u64, ordering: LethalityOrdering, exec: Execution) -> Result<Theorem2Report> {
    let certs: Vec<Result<Theorem2Certificate>> = map_indexed(exec, draws, |i| {
        let mut rng = SeedSpec::new(seed, 0, i as u64).rng(Stream::Custom(2), 0);
        theorem2_certificate(&draw_params(&mut rng, ordering), 1, 1)
    });
    let mut report = Theorem2Report {
        draws,
        min_a: f64::INFINITY,
        min_b: f64::INFINITY,
        min_cov12: f64::INFINITY,
        exceptions: 0,
        assumption_held: 0,
    };
    for cert in certs {
        let cert = cert?;
        report.min_a = report.min_a.min(cert.a);
        report.min_b = report.min_b.min(cert.b);
        report.min_cov12 = report.min_cov12.min(cert.cov12);
        if cert.assumption_holds {
            report.assumption_held += 1;
            if !cert.is_positive() {
                report.exceptions += 1;
            }
        }
    }
    Ok(report)
}
