//! Parser for compact prior specification strings.
//!
//! The grammar is `name(key=value, ...)` plus a handful of named shortcuts:
//!
//! ```text
//! pc-cor(strategy=1, rho0=-0.2, omega1=0.4, umin=-0.95, alpha1=0.05)
//! pc-var(u=3, a=0.05)
//! normal-z(mean=0, var=5)
//! invgamma(shape=0.25, rate=0.025)
//! fixed(rho=-0.2)
//! pc0 | pc1 | pc2 | pc3 | paul          (correlation shortcuts)
//! pc | invgamma                         (variance shortcuts)
//! ```
//!
//! Errors always name the offending token.

use super::{
    ComparisonPrior, CorrelationPcPrior, CorrelationPrior, PcContrasts, PcStrategy,
    VariancePcPrior, VariancePrior,
};
use crate::error::{Error, Result};

/// A `name(key=value, ...)` call, split into parts.
struct Call<'a> {
    name: &'a str,
    args: Vec<(&'a str, &'a str)>,
}

fn parse_call(text: &str) -> Result<Call<'_>> {
    let text = text.trim();
    let open = match text.find('(') {
        Some(i) => i,
        None => {
            return Ok(Call {
                name: text,
                args: Vec::new(),
            })
        }
    };
    if !text.ends_with(')') {
        return Err(Error::PriorSpec(format!(
            "`{text}`: missing closing parenthesis"
        )));
    }
    let name = text[..open].trim();
    let body = &text[open + 1..text.len() - 1];
    let mut args = Vec::new();
    for part in body.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part.split_once('=').ok_or_else(|| {
            Error::PriorSpec(format!("`{text}`: expected key=value, got `{part}`"))
        })?;
        args.push((k.trim(), v.trim()));
    }
    Ok(Call { name, args })
}

struct Args<'a> {
    owner: String,
    pairs: Vec<(&'a str, &'a str, bool)>,
}

impl<'a> Args<'a> {
    fn new(call: &Call<'a>) -> Self {
        Args {
            owner: call.name.to_string(),
            pairs: call.args.iter().map(|&(k, v)| (k, v, false)).collect(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a str> {
        for (k, v, used) in self.pairs.iter_mut() {
            if k.eq_ignore_ascii_case(key) {
                *used = true;
                return Some(v);
            }
        }
        None
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| {
                Error::PriorSpec(format!(
                    "`{}`: value `{v}` for `{key}` is not a number",
                    self.owner
                ))
            }),
        }
    }

    fn require(&mut self, key: &str) -> Result<f64> {
        self.number(key)?.ok_or_else(|| {
            Error::PriorSpec(format!("`{}`: missing required key `{key}`", self.owner))
        })
    }

    fn finish(self) -> Result<()> {
        for (k, _, used) in &self.pairs {
            if !used {
                return Err(Error::PriorSpec(format!(
                    "`{}`: unknown key `{k}`",
                    self.owner
                )));
            }
        }
        Ok(())
    }
}

/// Parse a correlation prior specification.
pub fn parse_correlation_prior(text: &str) -> Result<CorrelationPrior> {
    let call = parse_call(text)?;
    let lower = call.name.to_ascii_lowercase();
    match lower.as_str() {
        "pc0" => Ok(CorrelationPrior::Pc(CorrelationPcPrior::pc0())),
        "pc1" => Ok(CorrelationPrior::Pc(CorrelationPcPrior::pc1())),
        "pc2" => Ok(CorrelationPrior::Pc(CorrelationPcPrior::pc2())),
        "pc3" => Ok(CorrelationPrior::Pc(CorrelationPcPrior::pc3())),
        "paul" => CorrelationPrior::from_comparison(ComparisonPrior::standard_normal_z()),
        "pc-cor" => {
            let mut args = Args::new(&call);
            let strategy = match args.number("strategy")? {
                None => PcStrategy::LowerTail,
                Some(s) => {
                    if s.fract() != 0.0 {
                        return Err(Error::PriorSpec(format!(
                            "`{text}`: strategy must be an integer"
                        )));
                    }
                    PcStrategy::from_index(s as u8)?
                }
            };
            let rho0 = args.number("rho0")?.unwrap_or(0.0);
            let contrasts = PcContrasts {
                omega1: args.number("omega1")?,
                u_min: args.number("umin")?,
                alpha1: args.number("alpha1")?,
                u_max: args.number("umax")?,
                alpha2: args.number("alpha2")?,
            };
            args.finish()?;
            Ok(CorrelationPrior::Pc(CorrelationPcPrior::build(
                rho0, strategy, contrasts,
            )?))
        }
        "normal-z" => {
            let mut args = Args::new(&call);
            let mean = args.number("mean")?.unwrap_or(0.0);
            let variance = args.number("var")?.unwrap_or(5.0);
            args.finish()?;
            CorrelationPrior::from_comparison(ComparisonPrior::NormalOnZ { mean, variance })
        }
        "fixed" => {
            let mut args = Args::new(&call);
            let rho = args.require("rho")?;
            args.finish()?;
            CorrelationPrior::fixed(rho)
        }
        _ => Err(Error::PriorSpec(format!(
            "unknown correlation prior `{}`",
            call.name
        ))),
    }
}

/// Parse a variance prior specification.
pub fn parse_variance_prior(text: &str) -> Result<VariancePrior> {
    let call = parse_call(text)?;
    let lower = call.name.to_ascii_lowercase();
    match lower.as_str() {
        "pc" => Ok(VariancePrior::default()),
        "pc-var" => {
            let mut args = Args::new(&call);
            let u = args.number("u")?.unwrap_or(3.0);
            let a = args.number("a")?.unwrap_or(0.05);
            args.finish()?;
            Ok(VariancePrior::Pc(VariancePcPrior::new(u, a)?))
        }
        "invgamma" => {
            let mut args = Args::new(&call);
            let shape = args.number("shape")?.unwrap_or(0.25);
            let rate = args.number("rate")?.unwrap_or(0.025);
            args.finish()?;
            VariancePrior::from_comparison(ComparisonPrior::InverseGamma { shape, rate })
        }
        _ => Err(Error::PriorSpec(format!(
            "unknown variance prior `{}`",
            call.name
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_pc_cor_spec() {
        let p =
            parse_correlation_prior("pc-cor(strategy=1, rho0=-0.2, omega1=0.4, umin=-0.95, alpha1=0.05)")
                .unwrap();
        assert_eq!(p, CorrelationPrior::Pc(CorrelationPcPrior::pc1()));
    }

    #[test]
    fn shortcuts_match_explicit_forms() {
        assert_eq!(
            parse_correlation_prior("pc0").unwrap(),
            CorrelationPrior::Pc(CorrelationPcPrior::pc0())
        );
        assert_eq!(
            parse_correlation_prior("paul").unwrap(),
            parse_correlation_prior("normal-z(mean=0, var=5)").unwrap()
        );
        assert_eq!(
            parse_variance_prior("pc").unwrap(),
            parse_variance_prior("pc-var(u=3, a=0.05)").unwrap()
        );
        assert_eq!(
            parse_variance_prior("invgamma").unwrap(),
            parse_variance_prior("invgamma(shape=0.25, rate=0.025)").unwrap()
        );
    }

    #[test]
    fn strategy_three_spec() {
        let p = parse_correlation_prior(
            "pc-cor(strategy=3, rho0=-0.2, umin=-0.9, alpha1=0.05, umax=0.8, alpha2=0.05)",
        )
        .unwrap();
        assert_eq!(p, CorrelationPrior::Pc(CorrelationPcPrior::pc2()));
    }

    #[test]
    fn fixed_spec() {
        let p = parse_correlation_prior("fixed(rho=-0.2)").unwrap();
        assert_eq!(p.fixed_value(), Some(-0.2));
        assert!(parse_correlation_prior("fixed(rho=2)").is_err());
        assert!(parse_correlation_prior("fixed()").is_err());
    }

    #[test]
    fn errors_name_the_token() {
        let e = parse_correlation_prior("pc9").unwrap_err().to_string();
        assert!(e.contains("pc9"), "{e}");
        let e = parse_correlation_prior("pc-cor(strategy=1, omega1=0.5, umin=-0.9, alpha1=0.1, frobnicate=2)")
            .unwrap_err()
            .to_string();
        assert!(e.contains("frobnicate"), "{e}");
        let e = parse_variance_prior("pc-var(u=oops)").unwrap_err().to_string();
        assert!(e.contains("oops"), "{e}");
        let e = parse_variance_prior("pc-var(u=3").unwrap_err().to_string();
        assert!(e.contains("parenthesis"), "{e}");
    }

    #[test]
    fn defaults_fill_in() {
        // pc-cor defaults: strategy 1, rho0 = 0.
        let p = parse_correlation_prior("pc-cor(omega1=0.5, umin=-0.9, alpha1=0.1)").unwrap();
        assert_eq!(p, CorrelationPrior::Pc(CorrelationPcPrior::pc0()));
        let v = parse_variance_prior("pc-var()").unwrap();
        assert_eq!(v, VariancePrior::default());
    }
}
