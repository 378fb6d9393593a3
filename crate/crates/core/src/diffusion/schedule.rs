//! Absorbing-state transition algebra.
//!
//! `Q_t = (1 - β_t) I + β_t 1 e_mᵀ` moves every token to the absorbing id
//! `m` with probability `β_t` and leaves `m` in place. The cumulative product
//! has the closed form `Q̄_t = ᾱ_t I + (1 - ᾱ_t) 1 e_mᵀ`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<S: Scalar = f64> {
    betas: Vec<S>,
    /// `alpha_bar[t]` for `t = 0..=T`, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<S>,
    vocab: usize,
    mask: usize,
}

impl<S: Scalar> Schedule<S> {
    /// `betas[t - 1]` is `β_t`. Values must lie in `(0, 1]` and never
    /// decrease.
    pub fn new(betas: Vec<S>, vocab: usize, mask: usize) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if mask >= vocab {
            return Err(Error::invalid(format!(
                "absorbing id {mask} outside vocabulary of {vocab}"
            )));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > S::zero() && b <= S::one()) {
                return Err(Error::invalid(format!(
                    "beta_{} = {b} outside (0, 1]",
                    i + 1
                )));
            }
            if i > 0 && b < betas[i - 1] {
                return Err(Error::invalid(format!("beta decreases at step {}", i + 1)));
            }
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(S::one());
        for &b in &betas {
            let prev = *alpha_bar.last().expect("seeded with 1");
            alpha_bar.push(prev * (S::one() - b));
        }
        Ok(Schedule {
            betas,
            alpha_bar,
            vocab,
            mask,
        })
    }

    /// `β_t = t / T`, reaching total absorption at `t = T`.
    pub fn linear(steps: usize, vocab: usize, mask: usize) -> Result<Self> {
        let t = S::from_usize_lossy(steps);
        Self::new(
            (1..=steps).map(|i| S::from_usize_lossy(i) / t).collect(),
            vocab,
            mask,
        )
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn mask(&self) -> usize {
        self.mask
    }

    pub fn betas(&self) -> &[S] {
        &self.betas
    }

    fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::invalid(format!(
                "time step {t} outside {lo}..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<S> {
        self.check_t(t, 1)?;
        Ok(self.betas[t - 1])
    }

    /// Survival probability `ᾱ_t`, defined for `t = 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> Result<S> {
        self.check_t(t, 0)?;
        Ok(self.alpha_bar[t])
    }

    /// Errors unless the final step absorbs at least 99% of the mass.
    pub fn check_absorbing(&self) -> Result<()> {
        let last = self.alpha_bar[self.steps()];
        if last > S::lit(0.01) {
            return Err(Error::invalid(format!(
                "final survival probability {last} exceeds 0.01"
            )));
        }
        Ok(())
    }

    /// `Q_t[from][to]`.
    pub fn q(&self, t: usize, from: usize, to: usize) -> Result<S> {
        let b = self.beta(t)?;
        Ok(absorbing_entry(S::one() - b, self.mask, from, to))
    }

    /// `Q̄_t[from][to]` in closed form; `Q̄_0 = I`.
    pub fn q_bar(&self, t: usize, from: usize, to: usize) -> Result<S> {
        let a = self.alpha_bar(t)?;
        Ok(absorbing_entry(a, self.mask, from, to))
    }

    /// Dense `Q_t`.
    pub fn transition(&self, t: usize) -> Result<Vec<Vec<S>>> {
        self.dense(t, 1, |s, t, i, j| s.q(t, i, j))
    }

    /// Dense `Q̄_t`.
    pub fn cumulative_transition(&self, t: usize) -> Result<Vec<Vec<S>>> {
        self.dense(t, 1, |s, t, i, j| s.q_bar(t, i, j))
    }

    fn dense(
        &self,
        t: usize,
        lo: usize,
        f: impl Fn(&Self, usize, usize, usize) -> Result<S>,
    ) -> Result<Vec<Vec<S>>> {
        self.check_t(t, lo)?;
        (0..self.vocab)
            .map(|i| (0..self.vocab).map(|j| f(self, t, i, j)).collect())
            .collect()
    }

    /// `q(x_t | x_{t+1}, x_0)` over all `vocab` values of `x_t`, for
    /// `t = 0..T-1`.
    pub fn posterior(&self, x_next: usize, x0: usize, t: usize) -> Result<Vec<S>> {
        if t >= self.steps() {
            return Err(Error::invalid(format!(
                "posterior time {t} outside 0..{}",
                self.steps()
            )));
        }
        if x_next >= self.vocab || x0 >= self.vocab {
            return Err(Error::TokenOutOfRange {
                id: x_next.max(x0),
                size: self.vocab,
            });
        }
        let denom = self.q_bar(t + 1, x0, x_next)?;
        if denom <= S::zero() {
            return Err(Error::domain(
                "posterior",
                format!("x_{} = {x_next} is unreachable from x_0 = {x0}", t + 1),
            ));
        }
        (0..self.vocab)
            .map(|k| Ok(self.q(t + 1, k, x_next)? * self.q_bar(t, x0, k)? / denom))
            .collect()
    }

    /// `Σ_{x0} q(x_t | x_{t+1}, x0) p(x0)`, with `p` renormalized over the
    /// clean tokens that can reach `x_next`.
    pub fn posterior_mixture(&self, x_next: usize, p_x0: &[S], t: usize) -> Result<Vec<S>> {
        if p_x0.len() != self.vocab {
            return Err(Error::shape(
                "posterior_mixture",
                &[p_x0.len()],
                &[self.vocab],
            ));
        }
        let mut out = vec![S::zero(); self.vocab];
        let mut mass = S::zero();
        for (x0, &w) in p_x0.iter().enumerate() {
            if w <= S::zero() || self.q_bar(t + 1, x0, x_next)? <= S::zero() {
                continue;
            }
            mass += w;
            for (o, v) in out.iter_mut().zip(self.posterior(x_next, x0, t)?) {
                *o += w * v;
            }
        }
        if mass <= S::zero() {
            return Err(Error::domain(
                "posterior_mixture",
                format!("no clean token with probability mass reaches {x_next}"),
            ));
        }
        for o in &mut out {
            *o /= mass;
        }
        Ok(out)
    }
}

fn absorbing_entry<S: Scalar>(keep: S, mask: usize, from: usize, to: usize) -> S {
    if from == mask {
        return if to == mask { S::one() } else { S::zero() };
    }
    if to == from {
        keep
    } else if to == mask {
        S::one() - keep
    } else {
        S::zero()
    }
}
