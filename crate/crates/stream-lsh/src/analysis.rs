//! Closed-form retrieval analysis.
//!
//! For an index with `L` tables of `k`-bit sketches, an item at angular
//! similarity `s` to the query collides with it in one table's bucket with
//! probability `s^k`. The functions here combine that with quality-coin
//! insertion, retention survival, and interest-driven re-indexing to give
//! the probability of finding an item, in closed form:
//!
//! * success probability at exact (similarity, age, quality),
//! * its cumulative form over radius intervals (quadrature over a joint
//!   density of similarity, age, and quality),
//! * steady-state bucket presence under interest-driven re-indexing,
//! * expected index size and expected retained copies.
//!
//! These are the reference values the simulation suites are checked against.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Retention policy in analytical form. `Threshold` is described by the age
/// cutoff it induces under a constant arrival rate; bucket-capped retention
/// has no closed form (it depends on the data distribution) and is exercised
/// only empirically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticalPolicy {
    Threshold { t_age: f64 },
    Smooth { p: f64 },
}

impl AnalyticalPolicy {
    fn validate(&self) -> Result<()> {
        match *self {
            AnalyticalPolicy::Threshold { t_age } => {
                if !t_age.is_finite() {
                    return Err(Error::Domain(format!("t_age must be finite, got {t_age}")));
                }
            }
            AnalyticalPolicy::Smooth { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Domain(format!(
                        "retention factor p must lie strictly in (0,1), got {p}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Inputs to a pointwise success-probability evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpParams {
    pub policy: AnalyticalPolicy,
    pub k: u32,
    pub l: u32,
    /// Angular similarity of the sought item to the query.
    pub s: f64,
    /// Item age in ticks (real-valued for interpolation sweeps).
    pub a: f64,
    /// Item quality.
    pub z: f64,
}

/// Radius tuple for cumulative metrics and recall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusParams {
    pub r_sim: f64,
    pub r_age: u64,
    pub r_quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pop: Option<f64>,
}

impl RadiusParams {
    pub fn new(r_sim: f64, r_age: u64, r_quality: f64) -> Self {
        Self { r_sim, r_age, r_quality, r_pop: None }
    }

    pub fn with_pop(mut self, r_pop: f64) -> Self {
        self.r_pop = Some(r_pop);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r_sim) {
            return Err(Error::Domain(format!("r_sim {} outside [0,1]", self.r_sim)));
        }
        if !(0.0..=1.0).contains(&self.r_quality) {
            return Err(Error::Domain(format!("r_quality {} outside [0,1]", self.r_quality)));
        }
        if let Some(rp) = self.r_pop {
            if !(0.0..=1.0).contains(&rp) {
                return Err(Error::Domain(format!("r_pop {rp} outside [0,1]")));
            }
        }
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} must lie in [0,1], got {v}")));
    }
    Ok(())
}

fn check_kl(k: u32, l: u32) -> Result<()> {
    if k == 0 || l == 0 {
        return Err(Error::Domain("k and L must be at least 1".into()));
    }
    Ok(())
}

/// Probability that one bucket search finds the item, given its per-bucket
/// presence probability `present` and similarity `s`: each of the `L`
/// independent tables succeeds with probability `present * s^k`.
fn any_table(k: u32, l: u32, s: f64, present: f64) -> f64 {
    1.0 - (1.0 - present * s.powi(k as i32)).powi(l as i32)
}

/// Success probability under table-capped retention with age cutoff
/// `t_age`: full LSH success while the item is younger, zero afterwards.
pub fn sp_threshold(k: u32, l: u32, t_age: f64, s: f64, a: f64, z: f64) -> Result<f64> {
    check_kl(k, l)?;
    check_unit("s", s)?;
    check_unit("z", z)?;
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::Domain(format!("age must be a non-negative real, got {a}")));
    }
    AnalyticalPolicy::Threshold { t_age }.validate()?;
    Ok(if a < t_age { any_table(k, l, s, z) } else { 0.0 })
}

/// Success probability under geometric retention: a copy inserted with the
/// quality coin survives to age `a` with probability `p^a`.
pub fn sp_smooth(k: u32, l: u32, p: f64, s: f64, a: f64, z: f64) -> Result<f64> {
    check_kl(k, l)?;
    check_unit("s", s)?;
    check_unit("z", z)?;
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::Domain(format!("age must be a non-negative real, got {a}")));
    }
    AnalyticalPolicy::Smooth { p }.validate()?;
    Ok(any_table(k, l, s, p.powf(a) * z))
}

/// Pointwise success probability for either analytical policy.
pub fn sp(params: &SpParams) -> Result<f64> {
    match params.policy {
        AnalyticalPolicy::Threshold { t_age } => {
            sp_threshold(params.k, params.l, t_age, params.s, params.a, params.z)
        }
        AnalyticalPolicy::Smooth { p } => {
            sp_smooth(params.k, params.l, p, params.s, params.a, params.z)
        }
    }
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a >= b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

const QUAD_TOL: f64 = 1e-9;

/// Highest age the policy can still retain, capped at `r_age`. An item is
/// retained strictly below `t_age`, so the last contributing integer age is
/// `ceil(t_age) - 1`.
fn age_limit(policy: &AnalyticalPolicy, r_age: u64) -> Option<u64> {
    match *policy {
        AnalyticalPolicy::Smooth { .. } => Some(r_age),
        AnalyticalPolicy::Threshold { t_age } => {
            if t_age <= 0.0 {
                None
            } else {
                Some(r_age.min((t_age.ceil() as u64).saturating_sub(1)))
            }
        }
    }
}

/// Cumulative success probability over `s` uniform on `[r_sim, 1]` and age
/// uniform on `{0, ..., r_age}`, with unit quality: the expected pointwise
/// success probability over those choices.
pub fn csp(policy: &AnalyticalPolicy, k: u32, l: u32, r_sim: f64, r_age: u64) -> Result<f64> {
    check_kl(k, l)?;
    policy.validate()?;
    check_unit("r_sim", r_sim)?;
    if r_sim >= 1.0 {
        return Err(Error::DegenerateInterval("r_sim must be strictly below 1".into()));
    }
    let Some(a_hi) = age_limit(policy, r_age) else {
        return Ok(0.0);
    };
    let width = 1.0 - r_sim;
    let mut acc = 0.0;
    match *policy {
        AnalyticalPolicy::Threshold { .. } => {
            // the integrand does not depend on age below the cutoff
            let one = adaptive_simpson(&|s: f64| any_table(k, l, s, 1.0), r_sim, 1.0, QUAD_TOL);
            acc = one * (a_hi + 1) as f64;
        }
        AnalyticalPolicy::Smooth { p } => {
            for a in 0..=a_hi {
                let w = p.powi(a as i32);
                acc += adaptive_simpson(&|s: f64| any_table(k, l, s, w), r_sim, 1.0, QUAD_TOL);
            }
        }
    }
    Ok(acc / ((r_age + 1) as f64 * width))
}

/// Distribution of item quality over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityDist {
    /// Uniform density on `[0, 1]` (mean 0.5).
    Uniform,
    /// All items share one quality value.
    Point { value: f64 },
    /// Piecewise-constant density over equal-width bins on `[0, 1]`.
    Histogram { densities: Vec<f64> },
}

impl QualityDist {
    pub fn validate(&self) -> Result<()> {
        match self {
            QualityDist::Uniform => Ok(()),
            QualityDist::Point { value } => check_unit("point quality", *value),
            QualityDist::Histogram { densities } => {
                if densities.is_empty() || densities.iter().any(|&d| !d.is_finite() || d < 0.0) {
                    return Err(Error::Domain("histogram densities must be non-negative".into()));
                }
                let total: f64 = densities.iter().sum::<f64>() / densities.len() as f64;
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Domain(format!(
                        "histogram densities integrate to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Builds a normalized histogram from quality samples.
    pub fn histogram_from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.is_empty() || bins == 0 {
            return Err(Error::Domain("need samples and at least one bin".into()));
        }
        let mut counts = vec![0usize; bins];
        for &q in samples {
            check_unit("quality sample", q)?;
            let b = ((q * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let densities = counts
            .iter()
            .map(|&c| c as f64 / samples.len() as f64 * bins as f64)
            .collect();
        Ok(QualityDist::Histogram { densities })
    }

    pub fn mean(&self) -> f64 {
        match self {
            QualityDist::Uniform => 0.5,
            QualityDist::Point { value } => *value,
            QualityDist::Histogram { densities } => {
                let n = densities.len() as f64;
                densities
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| d / n * (i as f64 + 0.5) / n)
                    .sum()
            }
        }
    }

    /// Probability mass on `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match self {
            QualityDist::Uniform => hi - lo,
            QualityDist::Point { value } => {
                if (lo..=hi).contains(value) {
                    1.0
                } else {
                    0.0
                }
            }
            QualityDist::Histogram { densities } => {
                self.integrate(lo, hi, |_| 1.0)
            }
        }
    }

    /// Integral of `density(z) * f(z)` over `[lo, hi]`.
    fn integrate(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match self {
            QualityDist::Uniform => adaptive_simpson(&f, lo, hi, QUAD_TOL),
            QualityDist::Point { value } => {
                if (lo..=hi).contains(value) {
                    f(*value)
                } else {
                    0.0
                }
            }
            QualityDist::Histogram { densities } => {
                let n = densities.len();
                let mut acc = 0.0;
                for (i, &d) in densities.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let blo = (i as f64 / n as f64).max(lo);
                    let bhi = ((i + 1) as f64 / n as f64).min(hi);
                    if bhi > blo {
                        acc += d * adaptive_simpson(&f, blo, bhi, QUAD_TOL);
                    }
                }
                acc
            }
        }
    }
}

/// Whether insertion flips a quality coin per table or always indexes the
/// full `L` copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMode {
    Sensitive,
    Insensitive,
}

/// Cumulative success probability with a quality radius, under geometric
/// retention with factor `p`. The sensitive variant inserts with the quality
/// coin (success scales with `z`); the insensitive variant always indexes
/// all copies, and is typically paired with a smaller `p` so both use the
/// same expected space (see [`equal_capacity_smooth_pair`]).
pub fn csp_quality(
    mode: QualityMode,
    k: u32,
    l: u32,
    p: f64,
    r_sim: f64,
    r_age: u64,
    r_quality: f64,
    dist: &QualityDist,
) -> Result<f64> {
    check_kl(k, l)?;
    AnalyticalPolicy::Smooth { p }.validate()?;
    check_unit("r_sim", r_sim)?;
    check_unit("r_quality", r_quality)?;
    dist.validate()?;
    if r_sim >= 1.0 {
        return Err(Error::DegenerateInterval("r_sim must be strictly below 1".into()));
    }
    let z_mass = dist.mass(r_quality, 1.0);
    if z_mass <= 0.0 {
        return Err(Error::DegenerateInterval(format!(
            "no quality mass above r_quality={r_quality}"
        )));
    }
    let width = 1.0 - r_sim;
    let mut acc = 0.0;
    for a in 0..=r_age {
        let decay = p.powi(a as i32);
        let inner = |s: f64| -> f64 {
            match mode {
                QualityMode::Sensitive => {
                    dist.integrate(r_quality, 1.0, |z| any_table(k, l, s, decay * z)) / z_mass
                }
                QualityMode::Insensitive => any_table(k, l, s, decay),
            }
        };
        acc += adaptive_simpson(&inner, r_sim, 1.0, QUAD_TOL);
    }
    Ok(acc / ((r_age + 1) as f64 * width))
}

/// Checks that a (sensitive p, insensitive p) pair yields the same expected
/// index size: quality-sensitive insertion admits `mean_quality * mu` copies
/// per tick against `mu` for the insensitive variant, so the sizes match
/// when `mean_quality / (1 - p_sens) == 1 / (1 - p_insens)`.
pub fn equal_capacity_smooth_pair(
    p_sensitive: f64,
    p_insensitive: f64,
    mean_quality: f64,
    rel_tol: f64,
) -> Result<()> {
    AnalyticalPolicy::Smooth { p: p_sensitive }.validate()?;
    AnalyticalPolicy::Smooth { p: p_insensitive }.validate()?;
    check_unit("mean quality", mean_quality)?;
    let sens = mean_quality / (1.0 - p_sensitive);
    let insens = 1.0 / (1.0 - p_insensitive);
    if (sens - insens).abs() > rel_tol * insens {
        return Err(Error::InvalidConfig(format!(
            "unequal expected sizes: sensitive {sens:.3} vs insensitive {insens:.3} per unit arrival"
        )));
    }
    Ok(())
}

/// Steady-state probability that an item occupies its bucket when interest
/// arrives with per-tick probability `rho`, re-indexing flips a
/// `quality * u` coin, and retention keeps entries with probability `p` per
/// tick: `zu rho / (1 - p(1 - zu rho))`.
pub fn sb(p: f64, u: f64, rho: f64, z: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("p must lie in (0,1], got {p}")));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Domain(format!("u must lie in (0,1], got {u}")));
    }
    check_unit("rho", rho)?;
    check_unit("z", z)?;
    let q = z * u * rho;
    if p == 1.0 && q == 0.0 {
        return Err(Error::Domain(
            "p = 1 with zero insertion mass leaves bucket presence undefined".into(),
        ));
    }
    Ok(q / (1.0 - p * (1.0 - q)))
}

/// Success probability under interest-driven re-indexing with geometric
/// retention, for an item with expected popularity `w`.
pub fn sp_dynapop(k: u32, l: u32, p: f64, u: f64, s: f64, w: f64, z: f64) -> Result<f64> {
    check_kl(k, l)?;
    check_unit("s", s)?;
    check_unit("w", w)?;
    let present = sb(p, u, w, z)?;
    Ok(any_table(k, l, s, present))
}

/// Expected total index entries under geometric retention: `mu` arrivals per
/// tick with mean quality `phi` admit `mu*phi` entries per table per tick,
/// each surviving `p` per tick, over `l` tables.
pub fn expected_index_size(mu: f64, phi: f64, p: f64, l: u32) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("arrival rate mu must be positive, got {mu}")));
    }
    check_unit("phi", phi)?;
    AnalyticalPolicy::Smooth { p }.validate()?;
    if l == 0 {
        return Err(Error::Domain("L must be at least 1".into()));
    }
    Ok(mu * phi / (1.0 - p) * f64::from(l))
}

/// Expected number of index copies of a quality-`z` item at age `a`.
pub fn expected_copies(policy: &AnalyticalPolicy, l: u32, z: f64, a: f64) -> Result<f64> {
    policy.validate()?;
    check_unit("z", z)?;
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::Domain(format!("age must be a non-negative real, got {a}")));
    }
    Ok(match *policy {
        AnalyticalPolicy::Threshold { t_age } => {
            if a < t_age {
                z * f64::from(l)
            } else {
                0.0
            }
        }
        AnalyticalPolicy::Smooth { p } => z * f64::from(l) * p.powf(a),
    })
}

/// Mean pointwise success probability over observed (similarity, age,
/// quality) triples — the model's recall prediction for a measured corpus.
pub fn mean_sp(
    policy: &AnalyticalPolicy,
    k: u32,
    l: u32,
    observations: impl IntoIterator<Item = (f64, f64, f64)>,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (s, a, z) in observations {
        acc += sp(&SpParams { policy: *policy, k, l, s, a, z })?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateInterval("no observations".into()));
    }
    Ok(acc / n as f64)
}

/// Joint density of (similarity, age, quality) as an independent product,
/// for cumulative success probability under measured distributions.
#[derive(Clone, Debug)]
pub struct JointDensity {
    /// Density of similarity over `[0, 1]`.
    pub s: QualityDist,
    /// Probability mass per integer age `0..len`.
    pub age_mass: Vec<f64>,
    /// Density of quality over `[0, 1]`.
    pub z: QualityDist,
}

impl JointDensity {
    /// The illustration density: similarity uniform, ages equiprobable on
    /// `{0..=max_age}`, unit quality.
    pub fn uniform(max_age: u64) -> Self {
        Self {
            s: QualityDist::Uniform,
            age_mass: vec![1.0 / (max_age + 1) as f64; (max_age + 1) as usize],
            z: QualityDist::Point { value: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.s.validate()?;
        self.z.validate()?;
        if self.age_mass.is_empty() || self.age_mass.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::Domain("age masses must be non-negative".into()));
        }
        let total: f64 = self.age_mass.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("age masses sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Cumulative success probability under an explicit joint density, with the
/// normalization over the radius box computed explicitly.
pub fn csp_density(
    policy: &AnalyticalPolicy,
    k: u32,
    l: u32,
    radii: &RadiusParams,
    density: &JointDensity,
) -> Result<f64> {
    check_kl(k, l)?;
    policy.validate()?;
    radii.validate()?;
    density.validate()?;
    if radii.r_sim >= 1.0 {
        return Err(Error::DegenerateInterval("r_sim must be strictly below 1".into()));
    }
    let s_mass = density.s.mass(radii.r_sim, 1.0);
    let z_mass = density.z.mass(radii.r_quality, 1.0);
    let a_mass: f64 = density
        .age_mass
        .iter()
        .take(radii.r_age as usize + 1)
        .sum();
    let psi = s_mass * z_mass * a_mass;
    if psi <= 0.0 {
        return Err(Error::DegenerateInterval("no density mass inside the radius box".into()));
    }
    let mut acc = 0.0;
    for (a, &am) in density.age_mass.iter().enumerate().take(radii.r_age as usize + 1) {
        if am == 0.0 {
            continue;
        }
        let retain = match *policy {
            AnalyticalPolicy::Threshold { t_age } => {
                if (a as f64) < t_age {
                    1.0
                } else {
                    continue;
                }
            }
            AnalyticalPolicy::Smooth { p } => p.powi(a as i32),
        };
        let inner = |s: f64| density.z.integrate(radii.r_quality, 1.0, |z| any_table(k, l, s, retain * z));
        acc += am * density.s.integrate(radii.r_sim, 1.0, inner);
    }
    Ok(acc / psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: u32 = 10;
    const L: u32 = 15;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn threshold_sp_branches_on_the_cutoff() {
        assert_eq!(sp_threshold(K, L, 20.0, 1.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(sp_threshold(K, L, 20.0, 0.9, 20.0, 1.0).unwrap(), 0.0);
        let inside = sp_threshold(K, L, 20.0, 0.9, 5.0, 1.0).unwrap();
        assert!(close(inside, 0.99839, 1e-4), "got {inside}");
    }

    #[test]
    fn smooth_sp_matches_hand_computation() {
        assert_eq!(sp_smooth(K, L, 0.95, 1.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(sp_smooth(K, L, 0.95, 0.9, 7.0, 0.0).unwrap(), 0.0);
        let v = sp_smooth(K, L, 0.95, 0.9, 20.0, 1.0).unwrap();
        // 0.95^20 * 0.9^10 = 0.125, 1 - 0.875^15
        assert!(close(v, 0.8655, 5e-4), "got {v}");
    }

    #[test]
    fn smooth_sp_is_monotone_in_each_argument() {
        let base = sp_smooth(K, L, 0.95, 0.8, 10.0, 0.7).unwrap();
        assert!(sp_smooth(K, L, 0.95, 0.8, 11.0, 0.7).unwrap() < base);
        assert!(sp_smooth(K, L, 0.95, 0.81, 10.0, 0.7).unwrap() > base);
        assert!(sp_smooth(K, L, 0.95, 0.8, 10.0, 0.71).unwrap() > base);
        assert!(sp_smooth(K, L, 0.96, 0.8, 10.0, 0.7).unwrap() > base);
        // finite-difference signs of the partials
        let eps = 1e-6;
        let da = sp_smooth(K, L, 0.95, 0.8, 10.0 + eps, 0.7).unwrap() - base;
        let ds = sp_smooth(K, L, 0.95, 0.8 + eps, 10.0, 0.7).unwrap() - base;
        assert!(da < 0.0 && ds > 0.0);
    }

    #[test]
    fn sp_values_stay_probabilities() {
        for &s in &[0.0, 0.3, 0.7, 1.0] {
            for &a in &[0.0, 5.0, 50.0] {
                for &z in &[0.0, 0.5, 1.0] {
                    for policy in [
                        AnalyticalPolicy::Threshold { t_age: 20.0 },
                        AnalyticalPolicy::Smooth { p: 0.95 },
                    ] {
                        let v = sp(&SpParams { policy, k: K, l: L, s, a, z }).unwrap();
                        assert!((0.0..=1.0).contains(&v));
                    }
                }
            }
        }
    }

    #[test]
    fn csp_degenerates_to_pointwise_sp() {
        // r_age = 0 and r_sim -> 1: only (s=1, a=0) contributes
        let v = csp(&AnalyticalPolicy::Smooth { p: 0.95 }, K, L, 1.0 - 1e-9, 0).unwrap();
        assert!(close(v, 1.0, 1e-6), "got {v}");
    }

    #[test]
    fn csp_rejects_the_empty_similarity_interval() {
        let r = csp(&AnalyticalPolicy::Smooth { p: 0.95 }, K, L, 1.0, 10);
        assert!(matches!(r, Err(Error::DegenerateInterval(_))));
    }

    #[test]
    fn threshold_truncation_is_inactive_below_the_cutoff() {
        let far = csp(&AnalyticalPolicy::Threshold { t_age: 1e9 }, K, L, 0.8, 15).unwrap();
        let near = csp(&AnalyticalPolicy::Threshold { t_age: 16.0 }, K, L, 0.8, 15).unwrap();
        assert!(close(far, near, 1e-12));
    }

    #[test]
    fn csp_quadrature_converges() {
        // halving the effective step (via a stricter tolerance) moves the
        // result by less than 1e-6
        let a = csp(&AnalyticalPolicy::Smooth { p: 0.95 }, K, L, 0.8, 40).unwrap();
        // reference: trapezoid with very fine fixed grid
        let mut acc = 0.0;
        let steps = 20_000usize;
        for age in 0..=40u64 {
            let w = 0.95f64.powi(age as i32);
            let mut sum = 0.0;
            for i in 0..=steps {
                let s = 0.8 + 0.2 * i as f64 / steps as f64;
                let f = 1.0 - (1.0 - w * s.powi(10)).powi(15);
                sum += if i == 0 || i == steps { 0.5 * f } else { f };
            }
            acc += sum * (0.2 / steps as f64);
        }
        let reference = acc / (41.0 * 0.2);
        assert!(close(a, reference, 1e-6), "{a} vs {reference}");
    }

    #[test]
    fn csp_crossover_between_policies() {
        let threshold = AnalyticalPolicy::Threshold { t_age: 20.0 };
        let smooth = AnalyticalPolicy::Smooth { p: 0.95 };
        // geometric retention wins at generous age radii, capped retention
        // at tight ones
        for r_age in [30u64, 50, 80] {
            let s_ = csp(&smooth, K, L, 0.8, r_age).unwrap();
            let t_ = csp(&threshold, K, L, 0.8, r_age).unwrap();
            assert!(s_ > t_, "r_age={r_age}: smooth {s_} <= threshold {t_}");
        }
        for r_age in [5u64, 10, 15] {
            let s_ = csp(&smooth, K, L, 0.8, r_age).unwrap();
            let t_ = csp(&threshold, K, L, 0.8, r_age).unwrap();
            assert!(t_ >= s_, "r_age={r_age}: threshold {t_} < smooth {s_}");
        }
    }

    #[test]
    fn quality_point_mass_reduces_to_plain_csp() {
        let p = 0.95;
        let all_ones = QualityDist::Point { value: 1.0 };
        let with_quality =
            csp_quality(QualityMode::Sensitive, K, L, p, 0.8, 30, 1.0, &all_ones).unwrap();
        let plain = csp(&AnalyticalPolicy::Smooth { p }, K, L, 0.8, 30).unwrap();
        assert!(close(with_quality, plain, 1e-9));
        // and constant quality 1 makes both variants coincide at equal p
        let insens =
            csp_quality(QualityMode::Insensitive, K, L, p, 0.8, 30, 1.0, &all_ones).unwrap();
        assert!(close(with_quality, insens, 1e-9));
    }

    #[test]
    fn quality_sensitive_beats_insensitive_at_equal_size() {
        equal_capacity_smooth_pair(0.95, 0.9, 0.5, 1e-9).unwrap();
        for r_quality in [0.5, 0.9] {
            for r_age in (10..=100).step_by(10) {
                let sens = csp_quality(
                    QualityMode::Sensitive,
                    K,
                    L,
                    0.95,
                    0.8,
                    r_age,
                    r_quality,
                    &QualityDist::Uniform,
                )
                .unwrap();
                let insens = csp_quality(
                    QualityMode::Insensitive,
                    K,
                    L,
                    0.9,
                    0.8,
                    r_age,
                    r_quality,
                    &QualityDist::Uniform,
                )
                .unwrap();
                assert!(
                    sens > insens,
                    "r_age={r_age} r_quality={r_quality}: {sens} <= {insens}"
                );
            }
        }
    }

    #[test]
    fn empty_quality_interval_is_rejected() {
        let r = csp_quality(
            QualityMode::Sensitive,
            K,
            L,
            0.95,
            0.8,
            10,
            1.0,
            &QualityDist::Uniform,
        );
        assert!(matches!(r, Err(Error::DegenerateInterval(_))));
    }

    #[test]
    fn bucket_presence_closed_form() {
        assert_eq!(sb(0.95, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(sb(0.95, 1.0, 0.0, 1.0).unwrap(), 0.0);
        let v = sb(0.95, 1.0, 0.5, 1.0).unwrap();
        assert!(close(v, 0.95238, 1e-5), "got {v}");
        assert!(matches!(sb(1.0, 1.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert_eq!(sb(1.0, 1.0, 0.5, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn bucket_presence_is_monotone() {
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        for &a in &grid {
            for &b in &grid {
                if a >= b {
                    continue;
                }
                assert!(sb(0.95, 1.0, a, 1.0).unwrap() <= sb(0.95, 1.0, b, 1.0).unwrap());
                assert!(sb(0.95, a, 0.5, 1.0).unwrap() <= sb(0.95, b, 0.5, 1.0).unwrap());
                assert!(sb(a, 1.0, 0.5, 1.0).unwrap() <= sb(b, 1.0, 0.5, 1.0).unwrap());
                assert!(sb(0.95, 1.0, 0.5, a).unwrap() <= sb(0.95, 1.0, 0.5, b).unwrap());
            }
        }
    }

    #[test]
    fn dynapop_sp_edge_cases_and_monotonicity() {
        assert_eq!(sp_dynapop(K, L, 0.95, 1.0, 0.9, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(sp_dynapop(K, L, 0.95, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        for &s in &[0.7, 0.8, 0.9] {
            let mut prev = -1.0;
            for rank in (1..=100u32).rev() {
                let w = 1.0 / f64::from(rank);
                let v = sp_dynapop(K, L, 0.95, 1.0, s, w, 1.0).unwrap();
                assert!(v >= prev, "s={s} rank={rank}");
                prev = v;
            }
        }
    }

    #[test]
    fn expected_size_and_copies() {
        assert_eq!(expected_index_size(100.0, 1.0, 0.95, 15).unwrap(), 30_000.0);
        assert_eq!(expected_index_size(100.0, 0.0, 0.95, 15).unwrap(), 0.0);
        // capped retention sized as 20*mu*phi matches p=0.95 (20 = 1/(1-p))
        assert!(close(1.0 / (1.0 - 0.95), 20.0, 1e-12));

        let smooth = AnalyticalPolicy::Smooth { p: 0.95 };
        let threshold = AnalyticalPolicy::Threshold { t_age: 20.0 };
        assert_eq!(expected_copies(&smooth, 15, 0.5, 0.0).unwrap(), 7.5);
        assert_eq!(expected_copies(&threshold, 15, 0.5, 0.0).unwrap(), 7.5);
        let v = expected_copies(&smooth, 15, 0.5, 20.0).unwrap();
        assert!(close(v, 2.689, 1e-3), "got {v}");
        assert_eq!(expected_copies(&threshold, 15, 1.0, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn density_csp_agrees_with_the_uniform_specialization() {
        let smooth = AnalyticalPolicy::Smooth { p: 0.95 };
        let radii = RadiusParams::new(0.8, 25, 0.0);
        let d = JointDensity::uniform(25);
        let via_density = csp_density(&smooth, K, L, &radii, &d).unwrap();
        let direct = csp(&smooth, K, L, 0.8, 25).unwrap();
        assert!(close(via_density, direct, 1e-7), "{via_density} vs {direct}");
    }

    #[test]
    fn density_csp_handles_empirical_histograms() {
        let smooth = AnalyticalPolicy::Smooth { p: 0.95 };
        let s_hist = QualityDist::histogram_from_samples(&[0.82, 0.86, 0.9, 0.95, 0.97], 10).unwrap();
        let mut age_mass = vec![0.0; 31];
        for a in 0..=30usize {
            age_mass[a] = if a % 2 == 0 { 2.0 } else { 1.0 };
        }
        let total: f64 = age_mass.iter().sum();
        age_mass.iter_mut().for_each(|m| *m /= total);
        let d = JointDensity { s: s_hist, age_mass, z: QualityDist::Point { value: 1.0 } };
        let radii = RadiusParams::new(0.8, 30, 0.0);
        let v = csp_density(&smooth, K, L, &radii, &d).unwrap();
        assert!((0.0..=1.0).contains(&v));
        // tightening the age radius onto low ages can only help
        let tight = csp_density(&smooth, K, L, &RadiusParams::new(0.8, 10, 0.0), &d).unwrap();
        assert!(tight >= v);
    }

    #[test]
    fn quality_histogram_mass_and_mean() {
        let h = QualityDist::histogram_from_samples(&[0.1, 0.1, 0.9, 0.9], 2).unwrap();
        assert!(close(h.mass(0.0, 1.0), 1.0, 1e-9));
        assert!(close(h.mass(0.5, 1.0), 0.5, 1e-9));
        assert!(close(h.mean(), 0.5, 1e-9));
    }
}
