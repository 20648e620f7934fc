//! Discrete entropy and mutual information in bits over a joint
//! distribution of a goal variable `g` and two observation channels
//! (vision `V`, audio `A`).

use std::collections::BTreeMap;

use ndarray::{Array3, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;
/// Slack allowed when comparing joint against single-channel information.
pub const INEQUALITY_SLACK: f64 = 1e-9;

fn check_probs(p: &[f64], tol: f64) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {x} is not a probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

fn plogp_sum(p: impl IntoIterator<Item = f64>) -> f64 {
    -p.into_iter()
        .filter(|x| *x > 0.0)
        .map(|x| x * x.log2())
        .sum::<f64>()
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_probs(p, 1e-9)?;
    Ok(plogp_sum(p.iter().copied()))
}

/// Joint distribution over `(g, V, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    p: Array3<f64>,
}

/// Which observation channels to condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Vision,
    Audio,
    Both,
}

impl JointDistribution {
    pub fn new(p: Array3<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        check_probs(p.as_slice().expect("standard layout"), SUM_TOLERANCE)?;
        Ok(JointDistribution { p })
    }

    /// Build from non-negative weights, normalizing them.
    pub fn from_weights(w: Array3<f64>) -> Result<Self> {
        let total = w.sum();
        if !(total > 0.0) || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidDistribution("weights must be non-negative with a positive sum".into()));
        }
        Self::new(w.mapv(|x| x / total).as_standard_layout().to_owned())
    }

    pub fn supports(&self) -> (usize, usize, usize) {
        self.p.dim()
    }

    pub fn table(&self) -> &Array3<f64> {
        &self.p
    }

    fn h_goal(&self) -> f64 {
        plogp_sum(self.p.sum_axis(Axis(2)).sum_axis(Axis(1)))
    }

    /// Entropy of the selected channels, and of `g` jointly with them.
    fn h_channels(&self, ch: Channels) -> (f64, f64) {
        match ch {
            Channels::Vision => {
                let gv = self.p.sum_axis(Axis(2));
                (plogp_sum(gv.sum_axis(Axis(0))), plogp_sum(gv))
            }
            Channels::Audio => {
                let ga = self.p.sum_axis(Axis(1));
                (plogp_sum(ga.sum_axis(Axis(0))), plogp_sum(ga))
            }
            Channels::Both => (plogp_sum(self.p.sum_axis(Axis(0))), plogp_sum(self.p.iter().copied())),
        }
    }

    /// Conditional entropy `H(g | channels) = H(g, channels) - H(channels)`.
    pub fn conditional_entropy(&self, ch: Channels) -> f64 {
        let (h_x, h_gx) = self.h_channels(ch);
        h_gx - h_x
    }

    pub fn goal_entropy(&self) -> f64 {
        self.h_goal()
    }
}

/// `I(g; channels) = H(g) - H(g | channels)`, clamped at zero against
/// rounding.
pub fn mutual_information(joint: &JointDistribution, ch: Channels) -> f64 {
    let i = joint.h_goal() - joint.conditional_entropy(ch);
    if i < 0.0 && i > -1e-12 {
        0.0
    } else {
        i
    }
}

/// Whether `I(g; V, A) >= max(I(g; V), I(g; A))` within slack, and the
/// difference between the two sides.
pub fn verify_inequality(joint: &JointDistribution) -> (bool, f64) {
    let both = mutual_information(joint, Channels::Both);
    let single = mutual_information(joint, Channels::Vision).max(mutual_information(joint, Channels::Audio));
    let margin = both - single;
    (margin >= -INEQUALITY_SLACK, margin)
}

/// Flat-Dirichlet random joint with the given supports.
pub fn random_joint(rng: &mut impl Rng, dims: (usize, usize, usize)) -> JointDistribution {
    let w = Array3::from_shape_simple_fn(dims, || rng.sample::<f64, _>(Exp1));
    JointDistribution::from_weights(w).expect("exponential weights are positive")
}

/// Check the inequality on `samples` random joints with supports drawn from
/// 1..=4. Returns the number that hold.
pub fn verify_random(samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .filter(|_| {
            let dims = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
            verify_inequality(&random_joint(&mut rng, dims)).0
        })
        .count()
}

/// Plug-in estimates from `(goal, vision, speech)` logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub joint: f64,
    pub vision: f64,
    pub audio: f64,
}

pub fn estimate_from_logs<G: Ord, V: Ord, A: Ord>(logs: &[(G, V, A)]) -> Result<MiEstimate> {
    if logs.is_empty() {
        return Err(Error::EmptyLogs);
    }
    fn index<T: Ord>(items: impl Iterator<Item = T>) -> BTreeMap<T, usize> {
        let mut m = BTreeMap::new();
        for t in items {
            let n = m.len();
            m.entry(t).or_insert(n);
        }
        m
    }
    let gi = index(logs.iter().map(|l| &l.0));
    let vi = index(logs.iter().map(|l| &l.1));
    let ai = index(logs.iter().map(|l| &l.2));
    let mut counts = Array3::<f64>::zeros((gi.len(), vi.len(), ai.len()));
    for (g, v, a) in logs {
        counts[[gi[g], vi[v], ai[a]]] += 1.0;
    }
    let joint = JointDistribution::from_weights(counts)?;
    Ok(MiEstimate {
        joint: mutual_information(&joint, Channels::Both),
        vision: mutual_information(&joint, Channels::Vision),
        audio: mutual_information(&joint, Channels::Audio),
    })
}
