//! Adversarial loss families written as a split into a real-sample term,
//! a fake-sample term for the discriminator, and a generator term, each a
//! scalar function of a discriminator score.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::tensor::Tensor;

/// Names accepted by [`make_loss`].
pub const FAMILIES: [&str; 5] = ["vanilla-sym", "non-saturating", "lsgan", "wgan", "hinge"];

/// Grid size and tolerance of the numerical symmetry test.
pub const SYMMETRY_GRID: usize = 1000;
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Open interval `(lo, hi)`; infinite ends are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn contains(&self, s: f64) -> bool {
        s > self.lo && s < self.hi
    }

    /// `n` evenly spaced interior points; infinite ends are truncated at ±10.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let lo = if self.lo.is_finite() { self.lo } else { -10.0 };
        let hi = if self.hi.is_finite() { self.hi } else { 10.0 };
        (0..n)
            .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
            .collect()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// Derivative value plus a flag for points where a subgradient was substituted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slope {
    pub value: f64,
    pub kink: bool,
}

impl Slope {
    fn smooth(value: f64) -> Slope {
        Slope { value, kink: false }
    }
}

/// The three scalar terms of a loss family and their derivatives.
///
/// Implement this to register a family beyond the built-in ones; see
/// [`AdversarialLossSpec::custom`].
pub trait LossTerms: Send + Sync + fmt::Debug {
    fn real(&self, s: f64) -> f64;
    fn fake(&self, s: f64) -> f64;
    fn gen(&self, s: f64) -> f64;
    fn d_real(&self, s: f64) -> Slope;
    fn d_fake(&self, s: f64) -> Slope;
    fn d_gen(&self, s: f64) -> Slope;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Builtin {
    VanillaSym,
    NonSaturating,
    Lsgan,
    Wgan,
    Hinge,
}

impl LossTerms for Builtin {
    fn real(&self, s: f64) -> f64 {
        match self {
            Builtin::VanillaSym | Builtin::NonSaturating => -s.ln(),
            Builtin::Lsgan => 0.5 * (s - 1.0) * (s - 1.0),
            Builtin::Wgan => -s,
            Builtin::Hinge => (1.0 - s).max(0.0),
        }
    }

    fn fake(&self, s: f64) -> f64 {
        match self {
            Builtin::VanillaSym | Builtin::NonSaturating => -(-s).ln_1p(),
            Builtin::Lsgan => 0.5 * s * s,
            Builtin::Wgan => s,
            Builtin::Hinge => (1.0 + s).max(0.0),
        }
    }

    fn gen(&self, s: f64) -> f64 {
        match self {
            Builtin::VanillaSym => (-s).ln_1p(),
            Builtin::NonSaturating => -s.ln(),
            Builtin::Lsgan => 0.5 * (s - 1.0) * (s - 1.0),
            Builtin::Wgan | Builtin::Hinge => -s,
        }
    }

    fn d_real(&self, s: f64) -> Slope {
        match self {
            Builtin::VanillaSym | Builtin::NonSaturating => Slope::smooth(-1.0 / s),
            Builtin::Lsgan => Slope::smooth(s - 1.0),
            Builtin::Wgan => Slope::smooth(-1.0),
            Builtin::Hinge => hinge_slope(1.0 - s, -1.0),
        }
    }

    fn d_fake(&self, s: f64) -> Slope {
        match self {
            Builtin::VanillaSym | Builtin::NonSaturating => Slope::smooth(1.0 / (1.0 - s)),
            Builtin::Lsgan => Slope::smooth(s),
            Builtin::Wgan => Slope::smooth(1.0),
            Builtin::Hinge => hinge_slope(1.0 + s, 1.0),
        }
    }

    fn d_gen(&self, s: f64) -> Slope {
        match self {
            Builtin::VanillaSym => Slope::smooth(-1.0 / (1.0 - s)),
            Builtin::NonSaturating => Slope::smooth(-1.0 / s),
            Builtin::Lsgan => Slope::smooth(s - 1.0),
            Builtin::Wgan | Builtin::Hinge => Slope::smooth(-1.0),
        }
    }
}

// d/ds max(0, margin(s)) where d margin/ds = `dir`; subgradient 0 at the kink.
fn hinge_slope(margin: f64, dir: f64) -> Slope {
    if margin > 0.0 {
        Slope::smooth(dir)
    } else if margin < 0.0 {
        Slope::smooth(0.0)
    } else {
        Slope {
            value: 0.0,
            kink: true,
        }
    }
}

/// A named loss family with its numerically established symmetry flag.
#[derive(Clone, Debug)]
pub struct AdversarialLossSpec {
    name: String,
    terms: Arc<dyn LossTerms>,
    symmetric: bool,
    domain: Interval,
    opposition: Interval,
    tail: Activation,
}

impl AdversarialLossSpec {
    /// Registers a family. `domain` is where the terms are defined;
    /// `opposition` is the sub-interval where the fake-term and generator
    /// derivatives have opposite signs; `tail` is the discriminator's final
    /// activation that produces the score.
    pub fn custom(
        name: impl Into<String>,
        terms: Arc<dyn LossTerms>,
        domain: Interval,
        opposition: Interval,
        tail: Activation,
    ) -> AdversarialLossSpec {
        let symmetric = domain.grid(SYMMETRY_GRID).into_iter().all(|s| {
            let (f, g) = (terms.fake(s), terms.gen(s));
            (g + f).abs() <= SYMMETRY_TOL * f.abs().max(1.0)
        });
        AdversarialLossSpec {
            name: name.into(),
            terms,
            symmetric,
            domain,
            opposition,
            tail,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn opposition(&self) -> Interval {
        self.opposition
    }

    pub fn tail(&self) -> Activation {
        self.tail
    }

    pub fn terms(&self) -> &dyn LossTerms {
        self.terms.as_ref()
    }

    pub fn real_term(&self, s: f64) -> f64 {
        self.terms.real(s)
    }

    pub fn fake_term(&self, s: f64) -> f64 {
        self.terms.fake(s)
    }

    pub fn gen_term(&self, s: f64) -> f64 {
        self.terms.gen(s)
    }

    pub(crate) fn check_domain(&self, set: &'static str, scores: &[f64]) -> Result<()> {
        match scores.iter().position(|&s| !self.domain.contains(s)) {
            None => Ok(()),
            Some(i) => Err(Error::Domain {
                set,
                instance: i,
                value: scores[i],
                domain: self.domain.to_string(),
            }),
        }
    }
}

/// Looks up a built-in family by name.
pub fn make_loss(name: &str) -> Result<AdversarialLossSpec> {
    let (family, domain, opposition, tail) = match name {
        "vanilla-sym" => (
            Builtin::VanillaSym,
            Interval::UNIT,
            Interval::UNIT,
            Activation::Sigmoid,
        ),
        "non-saturating" => (
            Builtin::NonSaturating,
            Interval::UNIT,
            Interval::UNIT,
            Activation::Sigmoid,
        ),
        "lsgan" => (
            Builtin::Lsgan,
            Interval::REAL_LINE,
            Interval::UNIT,
            Activation::Identity,
        ),
        "wgan" => (
            Builtin::Wgan,
            Interval::REAL_LINE,
            Interval::REAL_LINE,
            Activation::Identity,
        ),
        "hinge" => (
            Builtin::Hinge,
            Interval::REAL_LINE,
            Interval {
                lo: -1.0,
                hi: f64::INFINITY,
            },
            Activation::Identity,
        ),
        _ => {
            return Err(Error::UnknownLoss {
                name: name.to_string(),
                supported: FAMILIES.join(", "),
            })
        }
    };
    Ok(AdversarialLossSpec::custom(
        name,
        Arc::new(family),
        domain,
        opposition,
        tail,
    ))
}

/// Discriminator scores for one real and one fake sub-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(real: Vec<f64>, fake: Vec<f64>) -> Self {
        ScoreBatch { real, fake }
    }

    /// From `[n, 1]` discriminator outputs.
    pub fn from_tensors(real: &Tensor, fake: &Tensor) -> Result<Self> {
        Ok(ScoreBatch {
            real: scores_of(real)?,
            fake: scores_of(fake)?,
        })
    }
}

/// Flattens a `[n, 1]` output into one score per instance.
pub fn scores_of(t: &Tensor) -> Result<Vec<f64>> {
    if t.instance_len() != 1 {
        return Err(Error::Usage(format!(
            "discriminator must emit one score per instance, got instance shape {:?}",
            t.instance_shape()
        )));
    }
    Ok(t.data().to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermValues {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
    pub gen: Vec<f64>,
    pub mean_real: f64,
    pub mean_fake: f64,
    pub mean_gen: f64,
}

impl TermValues {
    /// `mean L_D^r + mean L_D^f`
    pub fn loss_d(&self) -> f64 {
        self.mean_real + self.mean_fake
    }

    pub fn loss_g(&self) -> f64 {
        self.mean_gen
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn eval_terms(spec: &AdversarialLossSpec, scores: &ScoreBatch) -> Result<TermValues> {
    spec.check_domain("real", &scores.real)?;
    spec.check_domain("fake", &scores.fake)?;
    let real: Vec<f64> = scores.real.iter().map(|&s| spec.terms.real(s)).collect();
    let fake: Vec<f64> = scores.fake.iter().map(|&s| spec.terms.fake(s)).collect();
    let gen: Vec<f64> = scores.fake.iter().map(|&s| spec.terms.gen(s)).collect();
    Ok(TermValues {
        mean_real: mean(&real),
        mean_fake: mean(&fake),
        mean_gen: mean(&gen),
        real,
        fake,
        gen,
    })
}

/// Per-instance `dL_D^f/ds` and `dL_G/ds` at fake scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TermDerivatives {
    pub fake: Vec<f64>,
    pub gen: Vec<f64>,
    /// Instances where a subgradient replaced the derivative.
    pub kink: Vec<bool>,
}

pub fn term_derivatives(spec: &AdversarialLossSpec, fake_scores: &[f64]) -> Result<TermDerivatives> {
    spec.check_domain("fake", fake_scores)?;
    let mut out = TermDerivatives {
        fake: Vec::with_capacity(fake_scores.len()),
        gen: Vec::with_capacity(fake_scores.len()),
        kink: Vec::with_capacity(fake_scores.len()),
    };
    for &s in fake_scores {
        let f = spec.terms.d_fake(s);
        let g = spec.terms.d_gen(s);
        out.fake.push(f.value);
        out.gen.push(g.value);
        out.kink.push(f.kink || g.kink);
    }
    Ok(out)
}

/// Per-instance `dL_D^r/ds` at real scores.
pub fn real_derivatives(spec: &AdversarialLossSpec, real_scores: &[f64]) -> Result<Vec<f64>> {
    spec.check_domain("real", real_scores)?;
    Ok(real_scores.iter().map(|&s| spec.terms.d_real(s).value).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all() -> Vec<AdversarialLossSpec> {
        FAMILIES.iter().map(|n| make_loss(n).unwrap()).collect()
    }

    #[test]
    fn symmetry_flags() {
        let flags: Vec<(String, bool)> = all()
            .iter()
            .map(|s| (s.name().to_string(), s.symmetric()))
            .collect();
        assert_eq!(
            flags,
            vec![
                ("vanilla-sym".to_string(), true),
                ("non-saturating".to_string(), false),
                ("lsgan".to_string(), false),
                ("wgan".to_string(), true),
                ("hinge".to_string(), false),
            ]
        );
    }

    #[test]
    fn wgan_terms_are_negatives() {
        let w = make_loss("wgan").unwrap();
        assert_eq!(w.gen_term(0.4), -0.4);
        assert_eq!(w.gen_term(0.4), -w.fake_term(0.4));
    }

    #[test]
    fn unknown_name_lists_families() {
        let err = make_loss("relativistic").unwrap_err();
        let msg = err.to_string();
        for f in FAMILIES {
            assert!(msg.contains(f), "{msg}");
        }
    }

    #[test]
    fn hand_evaluated_terms() {
        let ns = make_loss("non-saturating").unwrap();
        let t = eval_terms(&ns, &ScoreBatch::new(vec![0.5], vec![0.5])).unwrap();
        assert!((t.fake[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((t.gen[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let ls = make_loss("lsgan").unwrap();
        let t = eval_terms(&ls, &ScoreBatch::new(vec![1.0], vec![1.0])).unwrap();
        assert_eq!((t.fake[0], t.gen[0]), (0.5, 0.0));

        let w = make_loss("wgan").unwrap();
        let t = eval_terms(&w, &ScoreBatch::new(vec![0.2], vec![0.2])).unwrap();
        assert_eq!(t.loss_d(), 0.0);
    }

    #[test]
    fn hand_evaluated_derivatives() {
        let ns = make_loss("non-saturating").unwrap();
        let d = term_derivatives(&ns, &[0.5]).unwrap();
        assert_eq!((d.fake[0], d.gen[0]), (2.0, -2.0));
        let ls = make_loss("lsgan").unwrap();
        let d = term_derivatives(&ls, &[0.5]).unwrap();
        assert_eq!((d.fake[0], d.gen[0]), (0.5, -0.5));
        let w = make_loss("wgan").unwrap();
        let d = term_derivatives(&w, &[-3.0, 0.1, 7.0]).unwrap();
        assert!(d.fake.iter().all(|&v| v == 1.0) && d.gen.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn hinge_kink_uses_zero_subgradient() {
        let h = make_loss("hinge").unwrap();
        let d = term_derivatives(&h, &[-1.0, -0.5]).unwrap();
        assert_eq!(d.fake, vec![0.0, 1.0]);
        assert_eq!(d.kink, vec![true, false]);
    }

    #[test]
    fn out_of_domain_scores_name_the_instance() {
        let ns = make_loss("non-saturating").unwrap();
        let err = eval_terms(&ns, &ScoreBatch::new(vec![0.3, 0.4], vec![0.2, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Domain { set: "fake", instance: 1, .. }));
    }

    fn interior_point(spec: &AdversarialLossSpec, u: f64) -> f64 {
        let iv = spec.opposition();
        match (iv.lo.is_finite(), iv.hi.is_finite()) {
            (true, true) => iv.lo + (iv.hi - iv.lo) * (0.01 + 0.98 * u),
            (true, false) => iv.lo + 0.01 + 9.0 * u,
            _ => -9.0 + 18.0 * u,
        }
    }

    // central difference with a step proportional to the distance to the boundary
    fn numeric(f: impl Fn(f64) -> f64, s: f64, spec: &AdversarialLossSpec) -> f64 {
        let iv = spec.domain();
        let room = (s - iv.lo).min(iv.hi - s).min(1.0);
        let h = 1e-4 * room;
        (f(s + h) - f(s - h)) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn derivatives_match_central_differences(u in 0.0f64..1.0) {
            for spec in all() {
                let s = interior_point(&spec, u);
                let t = spec.terms();
                for (analytic, num) in [
                    (t.d_real(s).value, numeric(|x| t.real(x), s, &spec)),
                    (t.d_fake(s).value, numeric(|x| t.fake(x), s, &spec)),
                    (t.d_gen(s).value, numeric(|x| t.gen(x), s, &spec)),
                ] {
                    // hinge real term has its kink at s = 1 inside the sampled range
                    if spec.name() == "hinge" && (s - 1.0).abs() < 1e-3 {
                        continue;
                    }
                    let rel = (analytic - num).abs() / analytic.abs().max(num.abs()).max(1e-12);
                    prop_assert!(rel < 1e-8 || (analytic == 0.0 && num.abs() < 1e-12),
                        "{} at {s}: {analytic} vs {num}", spec.name());
                }
            }
        }

        #[test]
        fn fake_and_generator_slopes_oppose(u in 0.0f64..1.0) {
            for spec in all() {
                let s = interior_point(&spec, u);
                let d = term_derivatives(&spec, &[s]).unwrap();
                prop_assert!(d.fake[0] * d.gen[0] < 0.0, "{} at {s}", spec.name());
            }
        }
    }
}
