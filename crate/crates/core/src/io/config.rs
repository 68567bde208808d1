//! Study configuration: flat `key = value` lines, `#` starts a comment.
//!
//! ```text
//! # EV errors, partly interval-censored, median regression
//! n = 200
//! tau = 0.5
//! error = ev            # ev | logistic | chisq3
//! hetero = m1           # m1 | m2
//! scheme = pic          # pic | ic
//! p0 = auto             # number in (0, 1) or auto
//! censoring_rate = 0.5  # target when p0 = auto
//! seed = 2024
//! replicates = 200
//! bootstrap = 100       # 0 skips standard errors and coverage
//! ci_level = 0.95
//! estimators = ks, zfd  # the first is the reference for RE
//! bandwidth = auto      # auto or a positive number
//! output = table.csv    # optional
//! ```
//!
//! `n`, `tau`, `error`, `hetero` and `scheme` are required. All problems in
//! a file are reported together.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{IcqrError, Result};
use crate::model::QuantileLevel;
use crate::pipeline::KernelChoice;
use crate::sim::{ErrorLaw, Estimator, Hetero, Scheme, SimScenario, StudyDesign};

const KEYS: [&str; 14] = [
    "n",
    "tau",
    "error",
    "hetero",
    "scheme",
    "p0",
    "censoring_rate",
    "seed",
    "replicates",
    "bootstrap",
    "ci_level",
    "estimators",
    "bandwidth",
    "output",
];

const REQUIRED: [&str; 5] = ["n", "tau", "error", "hetero", "scheme"];

/// How the exact-observation probability is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum P0Setting {
    Fixed(f64),
    /// Calibrate to this censored fraction.
    Calibrate(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Design with `scenario.p0` still unresolved when calibrating.
    pub design: StudyDesign,
    pub p0: P0Setting,
    pub output: Option<PathBuf>,
}

/// Collects values and problems while validating.
struct Fields {
    values: BTreeMap<String, (usize, String)>,
    errors: Vec<String>,
}

impl Fields {
    fn take<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        let (line, raw) = self.values.get(key)?.clone();
        match parse(&raw) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.errors.push(format!("line {line}: {key}: {msg}"));
                None
            }
        }
    }
}

fn number(raw: &str) -> std::result::Result<f64, String> {
    raw.parse::<f64>().map_err(|_| format!("{raw:?} is not a number"))
}

fn open_unit(raw: &str) -> std::result::Result<f64, String> {
    let v = number(raw)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie strictly between 0 and 1"))
    }
}

fn count(raw: &str) -> std::result::Result<usize, String> {
    raw.parse::<usize>().map_err(|_| format!("{raw:?} is not a nonnegative integer"))
}

fn estimator(raw: &str) -> std::result::Result<Estimator, String> {
    match raw.to_ascii_lowercase().as_str() {
        "ks" => Ok(Estimator::Ks),
        "zfd" => Ok(Estimator::Zfd),
        other => Err(format!("unknown estimator {other:?} (expected ks or zfd)")),
    }
}

/// Parses and validates a configuration file's contents.
pub fn parse_study_config(text: &str) -> Result<StudyConfig> {
    let mut fields = Fields {
        values: BTreeMap::new(),
        errors: Vec::new(),
    };
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            fields.errors.push(format!("line {line}: expected key = value"));
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            fields.errors.push(format!("line {line}: unknown key {key:?}"));
        } else if let Some((first, _)) = fields.values.get(&key) {
            fields
                .errors
                .push(format!("line {line}: {key} already set on line {first}"));
        } else {
            fields.values.insert(key, (line, value));
        }
    }
    for key in REQUIRED {
        if !fields.values.contains_key(key) {
            fields.errors.push(format!("missing required key {key}"));
        }
    }

    let n = fields.take("n", |raw| {
        let n = count(raw)?;
        if n >= 10 { Ok(n) } else { Err(format!("{n} is below the minimum of 10")) }
    });
    let tau = fields.take("tau", |raw| {
        let v = number(raw)?;
        QuantileLevel::new(v).map_err(|e| e.to_string())
    });
    let error = fields.take("error", |raw| match raw.to_ascii_lowercase().as_str() {
        "ev" => Ok(ErrorLaw::ExtremeValue),
        "logistic" => Ok(ErrorLaw::Logistic),
        "chisq3" => Ok(ErrorLaw::ChiSquared3),
        other => Err(format!("unknown error law {other:?} (expected ev, logistic or chisq3)")),
    });
    let hetero = fields.take("hetero", |raw| match raw.to_ascii_lowercase().as_str() {
        "m1" => Ok(Hetero::M1),
        "m2" => Ok(Hetero::M2),
        other => Err(format!("unknown scale model {other:?} (expected m1 or m2)")),
    });
    let scheme = fields.take("scheme", |raw| match raw.to_ascii_lowercase().as_str() {
        "pic" => Ok(Scheme::Pic),
        "ic" => Ok(Scheme::Ic),
        other => Err(format!("unknown scheme {other:?} (expected pic or ic)")),
    });
    let rate = fields.take("censoring_rate", open_unit).unwrap_or(0.5);
    let p0 = fields
        .take("p0", |raw| {
            if raw.eq_ignore_ascii_case("auto") {
                Ok(P0Setting::Calibrate(rate))
            } else {
                open_unit(raw).map(P0Setting::Fixed)
            }
        })
        .unwrap_or(P0Setting::Calibrate(rate));
    let seed = fields
        .take("seed", |raw| raw.parse::<u64>().map_err(|_| format!("{raw:?} is not a 64-bit unsigned integer")))
        .unwrap_or(0);
    let replicates = fields
        .take("replicates", |raw| {
            let r = count(raw)?;
            if r >= 2 { Ok(r) } else { Err("need at least 2 replicates".into()) }
        })
        .unwrap_or(200);
    let bootstrap = fields
        .take("bootstrap", |raw| {
            let b = count(raw)?;
            if b != 1 { Ok(b) } else { Err("use 0 to skip or at least 2 draws".into()) }
        })
        .unwrap_or(0);
    let ci_level = fields.take("ci_level", open_unit).unwrap_or(0.95);
    let estimators = fields
        .take("estimators", |raw| {
            let list = raw
                .split(',')
                .map(|s| estimator(s.trim()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if list.is_empty() {
                return Err("no estimators listed".into());
            }
            Ok(list)
        })
        .unwrap_or_else(|| vec![Estimator::Ks, Estimator::Zfd]);
    let kernel = fields
        .take("bandwidth", |raw| {
            if raw.eq_ignore_ascii_case("auto") {
                return Ok(KernelChoice::Auto);
            }
            let h = number(raw)?;
            if h > 0.0 && h.is_finite() {
                Ok(KernelChoice::Bandwidth(h))
            } else {
                Err(format!("{h} must be positive"))
            }
        })
        .unwrap_or(KernelChoice::Auto);
    let output = fields.take("output", |raw| Ok(PathBuf::from(raw)));

    if let (Some(Scheme::Ic), Some(_)) = (scheme, fields.values.get("p0")) {
        if matches!(p0, P0Setting::Fixed(_)) {
            fields
                .errors
                .push("p0 has no effect with scheme = ic; remove it".into());
        }
    }

    let (Some(n), Some(tau), Some(error), Some(hetero), Some(scheme)) = (n, tau, error, hetero, scheme)
    else {
        return Err(IcqrError::Config(fields.errors));
    };
    if !fields.errors.is_empty() {
        return Err(IcqrError::Config(fields.errors));
    }
    let mut scenario = SimScenario::new(n, tau, error, hetero, scheme);
    scenario.seed = seed;
    if let P0Setting::Fixed(v) = p0 {
        scenario.p0 = v;
    }
    let mut design = StudyDesign::new(scenario, estimators, replicates);
    design.n_bootstrap = bootstrap;
    design.ci_level = ci_level;
    design.kernel = kernel;
    Ok(StudyConfig { design, p0, output })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let text = "# EV errors\nn = 200\ntau = 0.5\nerror = ev\nhetero = m1\nscheme = pic\np0 = auto\n\
                    censoring_rate = 0.5\nseed = 2024\nreplicates = 200\nbootstrap = 100\nci_level = 0.95\n\
                    estimators = ks, zfd\nbandwidth = auto\noutput = table.csv\n";
        let cfg = parse_study_config(text).unwrap();
        assert_eq!(cfg.p0, P0Setting::Calibrate(0.5));
        assert_eq!(cfg.design.n_bootstrap, 100);
        assert_eq!(cfg.design.estimators, vec![Estimator::Ks, Estimator::Zfd]);
        assert_eq!(cfg.design.scenario.seed, 2024);
        assert_eq!(cfg.output, Some(PathBuf::from("table.csv")));
    }

    #[test]
    fn all_errors_are_reported_together() {
        let text = "n = 5\ntau = 1.5\nerror = gumbel\nfoo = 1\nn = 7\nbootstrap = 1\nthis line is wrong\n";
        match parse_study_config(text) {
            Err(IcqrError::Config(errors)) => {
                let all = errors.join("\n");
                for needle in ["minimum of 10", "tau", "gumbel", "unknown key \"foo\"", "already set", "bootstrap", "key = value", "hetero", "scheme"] {
                    assert!(all.contains(needle), "missing {needle:?} in\n{all}");
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixed_p0_and_bandwidth() {
        let text = "n=50\ntau=0.3\nerror=chisq3\nhetero=m2\nscheme=pic\np0=0.6\nbandwidth=0.2\nestimators=zfd\n";
        let cfg = parse_study_config(text).unwrap();
        assert_eq!(cfg.p0, P0Setting::Fixed(0.6));
        assert_eq!(cfg.design.scenario.p0, 0.6);
        assert_eq!(cfg.design.kernel, KernelChoice::Bandwidth(0.2));
        assert_eq!(cfg.design.estimators, vec![Estimator::Zfd]);
    }
}
