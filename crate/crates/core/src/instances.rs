//! Hard-instance generators used to measure tester power: the paired-bin
//! construction over an even domain, and a point-mass perturbation family
//! for odd domains.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{DiscreteDistribution, RngSeed};

/// A paired-bin instance over the domain `{0, ..., 2*k_pairs - 1}`.
///
/// A hidden bit selects between the uniform distribution (`x_bit = 0`) and
/// a perturbed one (`x_bit = 1`) where pair `j` carries masses
/// `(1 + y_j * alpha) / 2k` and `(1 - y_j * alpha) / 2k` on its two bins.
/// The perturbed distribution sits at total variation distance exactly
/// `alpha / 2` from uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaninskiInstance {
    k_pairs: usize,
    x_bit: u8,
    y_signs: Vec<i8>,
    alpha: f64,
}

impl PaninskiInstance {
    pub fn new(k_pairs: usize, x_bit: u8, y_signs: Vec<i8>, alpha: f64) -> Result<Self> {
        if k_pairs == 0 {
            return Err(Error::domain("k_pairs must be at least 1"));
        }
        if x_bit > 1 {
            return Err(Error::domain(format!("x_bit must be 0 or 1, got {x_bit}")));
        }
        if y_signs.len() != k_pairs {
            return Err(Error::domain(format!(
                "need {} signs, got {}",
                k_pairs,
                y_signs.len()
            )));
        }
        if y_signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::domain("signs must be +1 or -1"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(PaninskiInstance {
            k_pairs,
            x_bit,
            y_signs,
            alpha,
        })
    }

    pub fn k_pairs(&self) -> usize {
        self.k_pairs
    }

    pub fn domain_size(&self) -> usize {
        2 * self.k_pairs
    }

    pub fn x_bit(&self) -> u8 {
        self.x_bit
    }

    pub fn y_signs(&self) -> &[i8] {
        &self.y_signs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Exact total variation distance of the induced distribution from
    /// uniform: 0 for the uniform bit, `alpha / 2` for the perturbed one.
    pub fn tv_from_uniform(&self) -> f64 {
        if self.x_bit == 0 {
            0.0
        } else {
            self.alpha / 2.0
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let inst: PaninskiInstance = serde_json::from_str(s)?;
        // run the constructor checks on untrusted input
        PaninskiInstance::new(inst.k_pairs, inst.x_bit, inst.y_signs, inst.alpha)
    }
}

/// Draw an instance with i.i.d. uniform signs.
pub fn random_paninski(k_pairs: usize, alpha: f64, x_bit: u8, seed: RngSeed) -> Result<PaninskiInstance> {
    let mut rng = seed.rng();
    let y_signs: Vec<i8> = (0..k_pairs).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    PaninskiInstance::new(k_pairs, x_bit, y_signs, alpha)
}

/// The explicit probability vector of an instance.
pub fn paninski_distribution(inst: &PaninskiInstance) -> DiscreteDistribution {
    let d = inst.domain_size();
    if inst.x_bit == 0 {
        return DiscreteDistribution::uniform(d).expect("valid domain");
    }
    let base = 1.0 / d as f64;
    let mut probs = Vec::with_capacity(d);
    for &y in &inst.y_signs {
        let dev = y as f64 * inst.alpha;
        probs.push(base * (1.0 + dev));
        probs.push(base * (1.0 - dev));
    }
    DiscreteDistribution::new(probs).expect("pair masses sum to 1")
}

/// One draw in the decomposed view: a uniform pair index and a biased coin
/// choosing the side. Returns `(pair, first_side)`.
pub fn sample_decomposed<R: Rng + ?Sized>(inst: &PaninskiInstance, rng: &mut R) -> (usize, bool) {
    let pair = rng.gen_range(0..inst.k_pairs);
    let p_first = if inst.x_bit == 0 {
        0.5
    } else {
        (1.0 + inst.alpha * inst.y_signs[pair] as f64) / 2.0
    };
    let first = rng.gen::<f64>() < p_first;
    (pair, first)
}

/// One stream element drawn through the decomposed view.
pub fn sample_decomposed_element<R: Rng + ?Sized>(inst: &PaninskiInstance, rng: &mut R) -> usize {
    let (pair, first) = sample_decomposed(inst, rng);
    2 * pair + usize::from(!first)
}

/// Construction parameter that yields a requested total variation distance,
/// clamped to the family's maximum of 1 (total variation 1/2).
pub fn target_tv(tv: f64) -> f64 {
    (2.0 * tv).min(1.0)
}

/// A far instance whose distance from uniform is exactly `tv`
/// (requires `0 < tv <= 1/2`; signs drawn from `seed`).
pub fn far_instance_with_tv(k_pairs: usize, tv: f64, seed: RngSeed) -> Result<PaninskiInstance> {
    if !(tv > 0.0 && tv <= 0.5) {
        return Err(Error::domain(format!(
            "paired-bin instances reach total variation at most 1/2, got {tv}"
        )));
    }
    random_paninski(k_pairs, target_tv(tv), 1, seed)
}

/// Far family for domains where the paired construction does not apply
/// (odd k): move mass `alpha` onto element 0, taken evenly from the rest.
/// The result is at total variation distance exactly `alpha` from uniform.
pub fn point_mass_perturbed(k: usize, alpha: f64) -> Result<DiscreteDistribution> {
    if k < 2 {
        return Err(Error::domain("perturbed family needs k >= 2"));
    }
    let kf = k as f64;
    let max_alpha = (kf - 1.0) / kf;
    if !(alpha > 0.0 && alpha <= max_alpha) {
        return Err(Error::domain(format!(
            "alpha must lie in (0, {max_alpha}] for k={k}, got {alpha}"
        )));
    }
    let mut probs = vec![1.0 / kf - alpha / (kf - 1.0); k];
    probs[0] = 1.0 / kf + alpha;
    DiscreteDistribution::new(probs)
}
