//! Stochastic action heads on top of raw network outputs.
//!
//! The actor emits `2K` numbers: `K` query logits, each the log-odds of an
//! independent Bernoulli "query server k" decision, followed by `K` dispatch
//! logits for a categorical choice of target server.

use rand::Rng;

use crate::error::{Error, Result};

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 30.0;
/// Log-probabilities are floored at ln(1e-8).
pub const LOG_PROB_FLOOR: f64 = -18.420_680_743_952_367;

/// Log-probability and entropy of one head with their gradients w.r.t. that
/// head's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTerms {
    pub log_prob: f64,
    pub entropy: f64,
    pub d_log_prob: Vec<f64>,
    pub d_entropy: Vec<f64>,
}

impl HeadTerms {
    fn zeros(n: usize) -> Self {
        Self {
            log_prob: 0.0,
            entropy: 0.0,
            d_log_prob: vec![0.0; n],
            d_entropy: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHeads {
    query_logits: Vec<f64>,
    dispatch_logits: Vec<f64>,
    /// d(clamped)/d(raw) per logit, 0 where the clamp is active.
    query_pass: Vec<f64>,
    dispatch_pass: Vec<f64>,
}

fn clamp_logit(z: f64) -> (f64, f64) {
    if z > LOGIT_CLAMP {
        (LOGIT_CLAMP, 0.0)
    } else if z < -LOGIT_CLAMP {
        (-LOGIT_CLAMP, 0.0)
    } else {
        (z, 1.0)
    }
}

/// ln σ(z), computed without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl PolicyHeads {
    /// Splits a raw actor output of length `2 * n_servers`.
    pub fn from_output(output: &[f64], n_servers: usize) -> Result<Self> {
        if output.len() != 2 * n_servers {
            return Err(Error::Shape {
                expected: 2 * n_servers,
                actual: output.len(),
                context: "actor output (query + dispatch logits)",
            });
        }
        let (q, d) = output.split_at(n_servers);
        let (query_logits, query_pass) = q.iter().map(|&z| clamp_logit(z)).unzip();
        let (dispatch_logits, dispatch_pass) = d.iter().map(|&z| clamp_logit(z)).unzip();
        Ok(Self {
            query_logits,
            dispatch_logits,
            query_pass,
            dispatch_pass,
        })
    }

    pub fn n_servers(&self) -> usize {
        self.query_logits.len()
    }

    pub fn query_probs(&self) -> Vec<f64> {
        self.query_logits.iter().map(|&z| sigmoid(z)).collect()
    }

    /// Normalised exponential with max-subtraction.
    pub fn dispatch_probs(&self) -> Vec<f64> {
        let max = self.dispatch_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.dispatch_logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    pub fn sample_queries<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        self.query_probs()
            .into_iter()
            .map(|p| rng.random::<f64>() < p)
            .collect()
    }

    pub fn sample_dispatch<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let probs = self.dispatch_probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    pub fn greedy_queries(&self) -> Vec<bool> {
        self.query_logits.iter().map(|&z| z > 0.0).collect()
    }

    pub fn greedy_dispatch(&self) -> usize {
        self.dispatch_logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (k, &z)| if z > best.1 { (k, z) } else { best },
            )
            .0
    }

    /// Query head: Σ_k Bernoulli log-probabilities and entropies.
    pub fn query_terms(&self, queries: &[bool]) -> Result<HeadTerms> {
        let n = self.n_servers();
        if queries.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: queries.len(),
                context: "query bits",
            });
        }
        let mut t = HeadTerms::zeros(n);
        for k in 0..n {
            let z = self.query_logits[k];
            let p = sigmoid(z);
            // log p(c) = c ln σ(z) + (1-c) ln σ(-z); d/dz = c - p
            let (lp, dlp) = if queries[k] {
                (log_sigmoid(z), 1.0 - p)
            } else {
                (log_sigmoid(-z), -p)
            };
            let (lp, dlp) = if lp < LOG_PROB_FLOOR {
                (LOG_PROB_FLOOR, 0.0)
            } else {
                (lp, dlp)
            };
            t.log_prob += lp;
            t.d_log_prob[k] = dlp * self.query_pass[k];
            // H = -p ln p - (1-p) ln(1-p); dH/dz = -z p (1-p)
            let h = -(p * log_sigmoid(z) + (1.0 - p) * log_sigmoid(-z));
            t.entropy += h.max(0.0);
            t.d_entropy[k] = -z * p * (1.0 - p) * self.query_pass[k];
        }
        Ok(t)
    }

    /// Dispatch head: categorical log-probability of `choice` and entropy.
    pub fn dispatch_terms(&self, choice: usize) -> Result<HeadTerms> {
        let n = self.n_servers();
        if choice >= n {
            return Err(Error::contract(format!(
                "dispatch index {choice} out of range for {n} servers"
            )));
        }
        let probs = self.dispatch_probs();
        let max = self.dispatch_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.dispatch_logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = self.dispatch_logits.iter().map(|&z| z - lse).collect();
        let mut t = HeadTerms::zeros(n);
        let floored = log_probs[choice] < LOG_PROB_FLOOR;
        t.log_prob = log_probs[choice].max(LOG_PROB_FLOOR);
        t.entropy = -probs.iter().zip(&log_probs).map(|(p, lp)| p * lp).sum::<f64>();
        t.entropy = t.entropy.max(0.0);
        for j in 0..n {
            let indicator = if j == choice { 1.0 } else { 0.0 };
            t.d_log_prob[j] = if floored {
                0.0
            } else {
                (indicator - probs[j]) * self.dispatch_pass[j]
            };
            t.d_entropy[j] = -probs[j] * (log_probs[j] + t.entropy) * self.dispatch_pass[j];
        }
        Ok(t)
    }

    /// Joint log-probability and entropy of a (queries, dispatch) action with
    /// independent heads. The dispatch head contributes only when a dispatch
    /// happened. Gradients are laid out like the raw output (`2K`).
    pub fn log_prob_and_entropy(&self, queries: &[bool], dispatch: Option<usize>) -> Result<HeadTerms> {
        let n = self.n_servers();
        let q = self.query_terms(queries)?;
        let mut out = HeadTerms {
            log_prob: q.log_prob,
            entropy: q.entropy,
            d_log_prob: q.d_log_prob,
            d_entropy: q.d_entropy,
        };
        match dispatch {
            Some(k) => {
                let d = self.dispatch_terms(k)?;
                out.log_prob += d.log_prob;
                out.entropy += d.entropy;
                out.d_log_prob.extend(d.d_log_prob);
                out.d_entropy.extend(d.d_entropy);
            }
            None => {
                out.d_log_prob.extend(std::iter::repeat_n(0.0, n));
                out.d_entropy.extend(std::iter::repeat_n(0.0, n));
            }
        }
        Ok(out)
    }
}
