//! Synthetic distribution pairs.
//!
//! A spec string names a generator and its parameters, e.g. `uniform`,
//! `zipf(1.2)`, `two-bump(0.5)` or `swap-pair(zipf(1), 0.5)`. Far-pair
//! generators default their gap to the tester's `eps` when no parameter is
//! given. Every built pair is checked against its declared relation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{Distribution, RankOrder};
use crate::error::{Error, Result};
use crate::reference::{dirichlet, exp_approx_check, l1_distance};

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Uniform,
    /// `p` uniform; `q` alternates `(1 + eps)/k` and `(1 - eps)/k`.
    TwoBump(Option<f64>),
    /// Mass `eps/2` on element 1 in `p` and on element 2 in `q`, the rest uniform.
    Spike(Option<f64>),
    Zipf(f64),
    Dirichlet(f64),
    /// `p` from the base; `q` swaps heavy and light elements until `eps`-far.
    SwapPair(Box<GeneratorSpec>, Option<f64>),
}

/// What the pair is promised to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Relation {
    Equal,
    Far(f64),
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub p: Distribution,
    pub q: Distribution,
    pub relation: Relation,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidGenerator(msg.into())
}

/// Splits `a, b(c, d), e` on top-level commas.
fn split_args(s: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (idx, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..idx].trim());
                start = idx + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(bad(format!("unbalanced parentheses in {s:?}")));
        }
    }
    if depth != 0 {
        return Err(bad(format!("unbalanced parentheses in {s:?}")));
    }
    let last = s[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    Ok(out)
}

fn number(arg: &str) -> Result<f64> {
    arg.parse::<f64>().map_err(|_| bad(format!("expected a number, got {arg:?}")))
}

fn optional_gap(args: &[&str], name: &str) -> Result<Option<f64>> {
    match args {
        [] => Ok(None),
        [e] => Ok(Some(number(e)?)),
        _ => Err(bad(format!("{name} takes at most one argument"))),
    }
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                if !s.ends_with(')') {
                    return Err(bad(format!("missing closing parenthesis in {s:?}")));
                }
                (s[..open].trim(), split_args(&s[open + 1..s.len() - 1])?)
            }
            None => (s, Vec::new()),
        };
        let spec = match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "uniform" if args.is_empty() => GeneratorSpec::Uniform,
            "two-bump" => GeneratorSpec::TwoBump(optional_gap(&args, name)?),
            "spike" => GeneratorSpec::Spike(optional_gap(&args, name)?),
            "zipf" => match args.as_slice() {
                [] => GeneratorSpec::Zipf(1.0),
                [a] => GeneratorSpec::Zipf(number(a)?),
                _ => return Err(bad("zipf takes one exponent")),
            },
            "dirichlet" => match args.as_slice() {
                [] => GeneratorSpec::Dirichlet(1.0),
                [a] => GeneratorSpec::Dirichlet(number(a)?),
                _ => return Err(bad("dirichlet takes one concentration")),
            },
            "swap-pair" => {
                let (base, rest) = args.split_first().ok_or_else(|| bad("swap-pair needs a base generator"))?;
                let base: GeneratorSpec = base.parse()?;
                if base.relation_kind() != RelationKind::Equal {
                    return Err(bad("swap-pair base must be an equal-pair generator"));
                }
                GeneratorSpec::SwapPair(Box::new(base), optional_gap(rest, name)?)
            }
            _ => return Err(bad(format!("unknown generator {s:?}"))),
        };
        Ok(spec)
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let gap = |g: &Option<f64>| g.map(|e| format!("({e})")).unwrap_or_default();
        match self {
            GeneratorSpec::Uniform => write!(f, "uniform"),
            GeneratorSpec::TwoBump(g) => write!(f, "two-bump{}", gap(g)),
            GeneratorSpec::Spike(g) => write!(f, "spike{}", gap(g)),
            GeneratorSpec::Zipf(s) => write!(f, "zipf({s})"),
            GeneratorSpec::Dirichlet(a) => write!(f, "dirichlet({a})"),
            GeneratorSpec::SwapPair(b, None) => write!(f, "swap-pair({b})"),
            GeneratorSpec::SwapPair(b, Some(e)) => write!(f, "swap-pair({b},{e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RelationKind {
    Equal,
    Far,
}

impl GeneratorSpec {
    fn relation_kind(&self) -> RelationKind {
        match self {
            GeneratorSpec::Uniform | GeneratorSpec::Zipf(_) | GeneratorSpec::Dirichlet(_) => RelationKind::Equal,
            _ => RelationKind::Far,
        }
    }

    /// True for generators that promise an `eps`-far pair.
    pub fn is_far(&self) -> bool {
        self.relation_kind() == RelationKind::Far
    }

    /// Builds the pair at domain size `k`. `eps` is the tester's gap;
    /// `seed` only matters for random generators.
    pub fn build(&self, k: usize, eps: f64, seed: u64) -> Result<Fixture> {
        if k == 0 {
            return Err(Error::EmptyDistribution);
        }
        let (p, q) = self.pair(k, eps, seed)?;
        let relation = if self.is_far() { Relation::Far(eps) } else { Relation::Equal };
        let fixture = Fixture { p, q, relation };
        verify(&fixture)?;
        Ok(fixture)
    }

    fn pair(&self, k: usize, eps: f64, seed: u64) -> Result<(Distribution, Distribution)> {
        let kf = k as f64;
        match self {
            GeneratorSpec::Uniform => {
                let u = Distribution::uniform(k)?;
                Ok((u.clone(), u))
            }
            GeneratorSpec::Zipf(s) => {
                if !s.is_finite() || *s < 0.0 {
                    return Err(bad(format!("zipf exponent {s}")));
                }
                let z = Distribution::from_weights((1..=k).map(|i| (i as f64).powf(-s)).collect())?;
                Ok((z.clone(), z))
            }
            GeneratorSpec::Dirichlet(a) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = dirichlet(k, *a, &mut rng)?;
                Ok((d.clone(), d))
            }
            GeneratorSpec::TwoBump(g) => {
                let e = gap_or(*g, eps)?;
                if e > 1.0 {
                    return Err(bad("two-bump gap must be at most 1"));
                }
                let p = Distribution::uniform(k)?;
                let half = k / 2;
                let q = (0..k)
                    .map(|t| match t {
                        _ if t >= 2 * half => 1.0 / kf,
                        _ if t % 2 == 0 => (1.0 + e) / kf,
                        _ => (1.0 - e) / kf,
                    })
                    .collect();
                Ok((p, Distribution::from_weights(q)?))
            }
            GeneratorSpec::Spike(g) => {
                let e = gap_or(*g, eps)?;
                if k < 3 {
                    return Err(bad("spike needs k >= 3"));
                }
                let rest = (1.0 - e / 2.0) / (kf - 2.0);
                let mut pv = vec![rest; k];
                pv[0] = e / 2.0;
                pv[1] = 0.0;
                let mut qv = pv.clone();
                qv.swap(0, 1);
                Ok((Distribution::new(pv)?, Distribution::new(qv)?))
            }
            GeneratorSpec::SwapPair(base, g) => {
                let e = gap_or(*g, eps)?;
                let (p, _) = base.pair(k, eps, seed)?;
                let order = RankOrder::descending(p.probs());
                let mut qv = p.probs().to_vec();
                let mut l1 = 0.0;
                let (mut lo, mut hi) = (0, k.saturating_sub(1));
                while l1 < e && lo < hi {
                    let (a, b) = (order.id_at(lo) - 1, order.id_at(hi) - 1);
                    l1 += 2.0 * (qv[a] - qv[b]).abs();
                    qv.swap(a, b);
                    lo += 1;
                    hi -= 1;
                }
                Ok((p, Distribution::new(qv)?))
            }
        }
    }
}

fn gap_or(gap: Option<f64>, eps: f64) -> Result<f64> {
    let e = gap.unwrap_or(eps);
    if !(e > 0.0 && e <= 2.0) {
        return Err(Error::InvalidParameter { name: "eps", value: e });
    }
    Ok(e)
}

/// Checks the declared relation; far pairs also get the approximability
/// inequality checked exactly.
pub fn verify(f: &Fixture) -> Result<()> {
    let l1 = l1_distance(&f.p, &f.q)?;
    match f.relation {
        Relation::Equal => {
            if f.p != f.q {
                return Err(bad("equal-pair generator produced different distributions"));
            }
        }
        Relation::Far(eps) => {
            if l1 < eps - 1e-12 {
                return Err(Error::NotFar { eps, l1 });
            }
            let sum = exp_approx_check(&f.p, &f.q)?;
            if sum < l1 / 4.0 - 1e-12 {
                return Err(bad(format!("approximability sum {sum} below l1/4 = {}", l1 / 4.0)));
            }
        }
    }
    Ok(())
}
