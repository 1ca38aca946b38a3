//! Seeded simulation of trial outcome counts and the plug-in endpoint
//! estimators.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Denominator, Error, Result};
use crate::model::{to_joint, JointProbs, TrialParams};
use crate::par::{map_indexed, Execution};

/// Consecutive degenerate draws tolerated before giving up on a trial.
pub const MAX_RESAMPLE_ATTEMPTS: u32 = 100;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub(crate) fn mix_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5EED_u64, |h, &w| splitmix64(h ^ splitmix64(w)))
}

/// Independent random streams drawn from one [`SeedSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Control,
    Screen,
    /// Per-repetition scenario assignment.
    Scenario,
    /// Free-form tag for callers outside the trial simulator.
    Custom(u64),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Control => 1,
            Stream::Screen => 2,
            Stream::Scenario => 3,
            Stream::Custom(t) => 0x1000 + t,
        }
    }
}

/// Addresses one child random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub trial_index: u64,
    pub repetition_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, trial_index: u64, repetition_index: u64) -> Self {
        Self {
            master_seed,
            trial_index,
            repetition_index,
        }
    }

    /// A ChaCha8 generator keyed by the three seed fields, the stream tag and
    /// the resample attempt.
    pub fn rng(&self, stream: Stream, attempt: u32) -> ChaCha8Rng {
        let key = mix_words(&[
            self.master_seed,
            self.trial_index,
            self.repetition_index,
            stream.tag(),
            u64::from(attempt),
        ]);
        let mut seed = [0u8; 32];
        let mut state = key;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Cell counts of one arm, in the same cell order as [`JointProbs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub n: u64,
    pub c00: u64,
    pub c01: u64,
    pub c11: u64,
    pub c02: u64,
    pub c12: u64,
}

impl ArmCounts {
    pub fn from_cells(cells: [u64; 5]) -> Self {
        let [c00, c01, c11, c02, c12] = cells;
        Self {
            n: cells.iter().sum(),
            c00,
            c01,
            c11,
            c02,
            c12,
        }
    }

    pub fn cells(&self) -> [u64; 5] {
        [self.c00, self.c01, self.c11, self.c02, self.c12]
    }

    pub fn late(&self) -> u64 {
        self.c02 + self.c12
    }

    pub fn deaths(&self) -> u64 {
        self.c11 + self.c12
    }

    pub fn is_consistent(&self) -> bool {
        self.cells().iter().sum::<u64>() == self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub control: ArmCounts,
    pub screen: ArmCounts,
}

/// Draws multinomial cell counts as a chain of conditional binomials in the
/// fixed cell order.
pub fn sample_counts<R: Rng + ?Sized>(joint: &JointProbs, n: u64, rng: &mut R) -> ArmCounts {
    let probs = joint.cells();
    let mut cells = [0u64; 5];
    let mut remaining = n;
    for i in 0..4 {
        if remaining == 0 {
            break;
        }
        let rest: f64 = probs[i..].iter().sum();
        if rest <= 0.0 {
            break;
        }
        let q = (probs[i] / rest).clamp(0.0, 1.0);
        let draw = if q == 0.0 {
            0
        } else if q == 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q)
                .expect("conditional probability lies in [0,1]")
                .sample(rng)
        };
        cells[i] = draw;
        remaining -= draw;
    }
    cells[4] = remaining;
    ArmCounts::from_cells(cells)
}

/// Multinomial counts of one arm from the control stream of `seed`.
pub fn sample_arm(joint: &JointProbs, n: u64, seed: &SeedSpec) -> ArmCounts {
    sample_counts(joint, n, &mut seed.rng(Stream::Control, 0))
}

/// Plug-in estimates of the endpoint pair from one trial's counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointEstimate {
    pub s_hat: f64,
    pub m_hat: f64,
    /// Control arm size.
    pub n: u64,
    /// Screen arm size.
    pub m: u64,
    pub late_control: u64,
    pub late_screen: u64,
    pub deaths_control: u64,
    pub deaths_screen: u64,
}

impl EndpointEstimate {
    /// Estimates from marginal counts only (all that summary data provides).
    pub fn from_marginals(
        n: u64,
        m: u64,
        late_control: u64,
        late_screen: u64,
        deaths_control: u64,
        deaths_screen: u64,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Domain("arm sizes must be positive".into()));
        }
        if late_control > n || deaths_control > n || late_screen > m || deaths_screen > m {
            return Err(Error::Domain("counts exceed arm size".into()));
        }
        if late_control == 0 {
            return Err(Error::DegenerateDenominator(Denominator::ControlLate));
        }
        if deaths_control == 0 {
            return Err(Error::DegenerateDenominator(Denominator::ControlDeath));
        }
        let mut est = Self {
            s_hat: 0.0,
            m_hat: 0.0,
            n,
            m,
            late_control,
            late_screen,
            deaths_control,
            deaths_screen,
        };
        est.s_hat = 1.0 - est.p_hat_late_screen() / est.p_hat_late_control();
        est.m_hat = 1.0 - est.p_hat_death_screen() / est.p_hat_death_control();
        Ok(est)
    }

    pub fn p_hat_late_control(&self) -> f64 {
        self.late_control as f64 / self.n as f64
    }

    pub fn p_hat_late_screen(&self) -> f64 {
        self.late_screen as f64 / self.m as f64
    }

    pub fn p_hat_death_control(&self) -> f64 {
        self.deaths_control as f64 / self.n as f64
    }

    pub fn p_hat_death_screen(&self) -> f64 {
        self.deaths_screen as f64 / self.m as f64
    }

    /// Smallest of the four marginal counts entering the ratios.
    pub fn min_count(&self) -> u64 {
        self.late_control
            .min(self.late_screen)
            .min(self.deaths_control)
            .min(self.deaths_screen)
    }
}

pub fn estimate_endpoints(counts: &TrialCounts) -> Result<EndpointEstimate> {
    let (c, s) = (&counts.control, &counts.screen);
    EndpointEstimate::from_marginals(c.n, s.n, c.late(), s.late(), c.deaths(), s.deaths())
}

/// One simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulatedTrial {
    pub estimate: EndpointEstimate,
    pub counts: TrialCounts,
    /// Degenerate draws discarded before this one.
    pub resamples: u32,
}

/// Samples both arms and computes the plug-in estimates, redrawing on a
/// degenerate control arm.
pub fn simulate_trial(params: &TrialParams, n: u64, m: u64, seed: &SeedSpec) -> Result<SimulatedTrial> {
    if n == 0 || m == 0 {
        return Err(Error::Domain("arm sizes must be positive".into()));
    }
    let jc = to_joint(&params.control)?;
    let js = to_joint(&params.screen)?;
    simulate_joint(&jc, &js, n, m, seed)
}

pub(crate) fn simulate_joint(
    jc: &JointProbs,
    js: &JointProbs,
    n: u64,
    m: u64,
    seed: &SeedSpec,
) -> Result<SimulatedTrial> {
    for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
        let counts = TrialCounts {
            control: sample_counts(jc, n, &mut seed.rng(Stream::Control, attempt)),
            screen: sample_counts(js, m, &mut seed.rng(Stream::Screen, attempt)),
        };
        match estimate_endpoints(&counts) {
            Ok(estimate) => {
                return Ok(SimulatedTrial {
                    estimate,
                    counts,
                    resamples: attempt,
                })
            }
            Err(Error::DegenerateDenominator(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SimulationFailure {
        attempts: MAX_RESAMPLE_ATTEMPTS,
    })
}

/// Simulates `repetitions` independent replicates of one trial, replicate `r`
/// using `SeedSpec::new(master_seed, 0, r)`.
pub fn simulate_replicates(
    params: &TrialParams,
    n: u64,
    m: u64,
    master_seed: u64,
    repetitions: usize,
    exec: Execution,
) -> Result<Vec<SimulatedTrial>> {
    let jc = to_joint(&params.control)?;
    let js = to_joint(&params.screen)?;
    map_indexed(exec, repetitions, |r| {
        simulate_joint(&jc, &js, n, m, &SeedSpec::new(master_seed, 0, r as u64))
    })
    .into_iter()
    .collect()
}

/// Row of the raw-estimate export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub repetition: u64,
    pub trial: u64,
    pub estimate: EndpointEstimate,
    pub resamples: u32,
}

/// Writes per-repetition estimates as CSV:
/// `repetition,trial,S_hat,M_hat,n,m,resamples`.
pub fn write_estimates_csv<W: Write>(rows: &[EstimateRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["repetition", "trial", "S_hat", "M_hat", "n", "m", "resamples"])?;
    for row in rows {
        w.write_record([
            row.repetition.to_string(),
            row.trial.to_string(),
            crate::format::sig6(row.estimate.s_hat),
            crate::format::sig6(row.estimate.m_hat),
            row.estimate.n.to_string(),
            row.estimate.m.to_string(),
            row.resamples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
