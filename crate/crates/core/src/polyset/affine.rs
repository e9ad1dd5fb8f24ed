use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An affine form `sum(coeff * var) + constant` over named variables.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffineExpr {
    terms: BTreeMap<String, i64>,
    constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        Self { terms: BTreeMap::new(), constant: c }
    }

    pub fn var(name: &str) -> Self {
        Self::term(name, 1)
    }

    pub fn term(name: &str, coeff: i64) -> Self {
        let mut e = Self::constant(0);
        e.add_term(name, coeff);
        e
    }

    pub fn add_term(&mut self, name: &str, coeff: i64) {
        let slot = self.terms.entry(name.to_string()).or_insert(0);
        *slot += coeff;
        if *slot == 0 {
            self.terms.remove(name);
        }
    }

    pub fn coeff(&self, name: &str) -> i64 {
        self.terms.get(name).copied().unwrap_or(0)
    }

    pub fn constant_term(&self) -> i64 {
        self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, i64)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(|k| k.as_str())
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.terms.contains_key(name)
    }

    pub fn add(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k, *v);
        }
        out.constant += other.constant;
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> AffineExpr {
        self.add(&other.scale(-1))
    }

    pub fn scale(&self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::constant(0);
        }
        AffineExpr {
            terms: self.terms.iter().map(|(n, c)| (n.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn offset(&self, c: i64) -> AffineExpr {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    /// Replaces `name` by `value` everywhere it occurs.
    pub fn substitute(&self, name: &str, value: &AffineExpr) -> AffineExpr {
        let c = self.coeff(name);
        if c == 0 {
            return self.clone();
        }
        let mut rest = self.clone();
        rest.terms.remove(name);
        rest.add(&value.scale(c))
    }

    pub fn rename(&self, from: &str, to: &str) -> AffineExpr {
        self.substitute(from, &AffineExpr::var(to))
    }

    /// Evaluates with every variable looked up through `lookup`; `None` when a
    /// variable has no value.
    pub fn eval_with(&self, lookup: impl Fn(&str) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for (k, v) in &self.terms {
            acc += v * lookup(k)?;
        }
        Some(acc)
    }

    pub fn eval(&self, values: &BTreeMap<String, i64>) -> Option<i64> {
        self.eval_with(|n| values.get(n).copied())
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, c) in &self.terms {
            let c = *c;
            if first {
                match c {
                    1 => write!(f, "{name}")?,
                    -1 => write!(f, "-{name}")?,
                    _ => write!(f, "{c}*{name}")?,
                }
            } else if c < 0 {
                if c == -1 {
                    write!(f, " - {name}")?
                } else {
                    write!(f, " - {}*{name}", -c)?
                }
            } else if c == 1 {
                write!(f, " + {name}")?
            } else {
                write!(f, " + {c}*{name}")?
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)
        } else {
            Ok(())
        }
    }
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub(crate) fn floor_div(a: i64, b: i64) -> i64 {
    debug_assert!(b != 0);
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

pub(crate) fn ceil_div(a: i64, b: i64) -> i64 {
    -floor_div(-a, b)
}
