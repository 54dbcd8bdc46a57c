//! Nonlinear signal model and readout-fidelity arithmetic.
//!
//! A state-dependent shift of the field operator adds `eps_gamma` times the
//! full-state expectation of the voltage to every voltage reading. In the
//! switch experiment the bit-0 branch therefore reads
//! `vs + eps_gamma * v1 * (f - 1/2)` instead of the leakage level `vs`, where
//! `f` is the readout fidelity of the bit source. Everything here is a pure
//! function.

use thiserror::Error;

/// Largest repetition count accepted by [`net_fidelity_majority`]. Binomial
/// coefficients are evaluated directly in `f64`, which is exact enough and
/// does not overflow up to this size.
pub const MAX_REPETITIONS: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("branch weight {0} outside [0, 1]")]
    BranchWeight(f64),
    #[error("readout fidelity {0} outside [1/2, 1]")]
    Fidelity(f64),
    #[error("repetition count {0} outside 1..={MAX_REPETITIONS}")]
    Repetitions(u32),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// How the voltage expectation value is taken after the qubit measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpretation {
    /// The trace runs over the whole (unbranched) state; the shift survives.
    #[default]
    Everett,
    /// The state collapses after measurement; the nonlinear term vanishes.
    Copenhagen,
}

/// Physics constants of the outcome model. Voltages in volts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearParams {
    eps_gamma: f64,
    v0: f64,
    v1: f64,
    vs: f64,
    interpretation: Interpretation,
}

impl Default for NonlinearParams {
    fn default() -> Self {
        Self {
            eps_gamma: 0.0,
            v0: 0.0,
            v1: 3.0,
            vs: 0.0,
            interpretation: Interpretation::Everett,
        }
    }
}

impl NonlinearParams {
    pub fn new(
        eps_gamma: f64,
        v0: f64,
        v1: f64,
        vs: f64,
        interpretation: Interpretation,
    ) -> Result<Self, ModelError> {
        if ![eps_gamma, v0, v1, vs].iter().all(|v| v.is_finite()) {
            return Err(ModelError::Params("non-finite value".into()));
        }
        if v1 <= v0 {
            return Err(ModelError::Params(format!("v1 = {v1} V must exceed v0 = {v0} V")));
        }
        if vs.abs() >= v1 / 10.0 {
            return Err(ModelError::Params(format!(
                "leakage |vs| = {} V must stay below v1/10",
                vs.abs()
            )));
        }
        Ok(Self {
            eps_gamma,
            v0,
            v1,
            vs,
            interpretation,
        })
    }

    /// Default voltages (0 V / 3 V) with the given nonlinearity and leakage.
    pub fn with_eps(eps_gamma: f64, vs: f64) -> Result<Self, ModelError> {
        Self::new(eps_gamma, 0.0, 3.0, vs, Interpretation::Everett)
    }

    pub fn eps_gamma(&self) -> f64 {
        self.eps_gamma
    }
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn v1(&self) -> f64 {
        self.v1
    }
    pub fn vs(&self) -> f64 {
        self.vs
    }
    pub fn interpretation(&self) -> Interpretation {
        self.interpretation
    }

    /// Nonlinearity seen by observables: zero under Copenhagen.
    fn effective_eps(&self) -> f64 {
        match self.interpretation {
            Interpretation::Everett => self.eps_gamma,
            Interpretation::Copenhagen => 0.0,
        }
    }
}

/// Voltage added to every reading by the state-dependent term, for a state
/// whose bit-1 branch carries weight `p1`: `eps * (p1 * v1 + (1 - p1) * v0)`.
pub fn state_expectation_shift(p1: f64, params: &NonlinearParams) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(ModelError::BranchWeight(p1));
    }
    Ok(params.effective_eps() * (p1 * params.v1 + (1.0 - p1) * params.v0))
}

fn check_fidelity(f: f64) -> Result<(), ModelError> {
    if (0.5..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(ModelError::Fidelity(f))
    }
}

/// Mean reading for a cycle driven by `bit` from a source of readout
/// fidelity `fidelity`.
pub fn expected_reading(bit: u8, fidelity: f64, params: &NonlinearParams) -> Result<f64, ModelError> {
    check_fidelity(fidelity)?;
    Ok(if bit == 0 {
        params.vs + params.effective_eps() * params.v1 * (fidelity - 0.5)
    } else {
        params.v1
    })
}

/// Net fidelity of a majority vote over `n` independent readouts that are
/// each correct with probability `p`. Ties (even `n`) are broken by a fair
/// coin.
pub fn net_fidelity_majority(p: f64, n: u32) -> Result<f64, ModelError> {
    check_fidelity(p)?;
    if n == 0 || n > MAX_REPETITIONS {
        return Err(ModelError::Repetitions(n));
    }
    if n == 1 {
        return Ok(p);
    }
    let q = 1.0 - p;
    // Sum the losing outcomes and subtract: the small tail is accurate and
    // keeps the result monotone in `p` right up to 1.
    let mut fail = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=n / 2 {
        let term = binom * p.powi(k as i32) * q.powi((n - k) as i32);
        fail += if 2 * k == n { 0.5 * term } else { term };
        binom = binom * f64::from(n - k) / f64::from(k + 1);
    }
    Ok((1.0 - fail).clamp(0.5, 1.0))
}

/// Per-readout fidelity whose `n`-fold majority vote reaches `net_target`.
pub fn per_cycle_from_net(net_target: f64, n: u32) -> Result<f64, ModelError> {
    check_fidelity(net_target)?;
    if n == 0 || n > MAX_REPETITIONS {
        return Err(ModelError::Repetitions(n));
    }
    let (mut lo, mut hi) = (0.5f64, 1.0f64);
    if net_fidelity_majority(lo, n)? >= net_target {
        return Ok(lo);
    }
    if net_fidelity_majority(hi, n)? <= net_target {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if net_fidelity_majority(mid, n)? < net_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dlo = (net_fidelity_majority(lo, n)? - net_target).abs();
    let dhi = (net_fidelity_majority(hi, n)? - net_target).abs();
    Ok(if dlo <= dhi { lo } else { hi })
}

/// Readout fidelity of a bit source, optionally built from repeated weak
/// readouts combined by majority vote.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityModel {
    net_fidelity: f64,
    n_repetitions: u32,
    per_cycle_fidelity: f64,
}

impl FidelityModel {
    /// Single-shot readout.
    pub fn direct(fidelity: f64) -> Result<Self, ModelError> {
        check_fidelity(fidelity)?;
        Ok(Self {
            net_fidelity: fidelity,
            n_repetitions: 1,
            per_cycle_fidelity: fidelity,
        })
    }

    pub fn from_per_cycle(per_cycle: f64, n: u32) -> Result<Self, ModelError> {
        Ok(Self {
            net_fidelity: net_fidelity_majority(per_cycle, n)?,
            n_repetitions: n,
            per_cycle_fidelity: per_cycle,
        })
    }

    pub fn from_net(net: f64, n: u32) -> Result<Self, ModelError> {
        let per_cycle = per_cycle_from_net(net, n)?;
        Ok(Self {
            net_fidelity: net,
            n_repetitions: n,
            per_cycle_fidelity: per_cycle,
        })
    }

    pub fn net_fidelity(&self) -> f64 {
        self.net_fidelity
    }
    pub fn n_repetitions(&self) -> u32 {
        self.n_repetitions
    }
    pub fn per_cycle_fidelity(&self) -> f64 {
        self.per_cycle_fidelity
    }
}
